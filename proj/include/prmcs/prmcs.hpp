#pragma once

#include "prmcs/dataset.hpp"
#include "prmcs/embedcore.hpp"
#include "prmcs/errors.hpp"
#include "prmcs/evalstats.hpp"
#include "prmcs/losses.hpp"
#include "prmcs/metric.hpp"
#include "prmcs/rng.hpp"
#include "prmcs/textproc.hpp"
#include "prmcs/trainer.hpp"
