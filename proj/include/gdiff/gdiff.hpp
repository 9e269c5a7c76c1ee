#pragma once

#include "gdiff/diagnostics.hpp"
#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/gdtf.hpp"
#include "gdiff/gibbs.hpp"
#include "gdiff/hmc.hpp"
#include "gdiff/metrics.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/oracle.hpp"
#include "gdiff/posterior_sampler.hpp"
#include "gdiff/predictor_io.hpp"
#include "gdiff/rng.hpp"
#include "gdiff/run_config.hpp"
#include "gdiff/schedule.hpp"
#include "gdiff/score_model.hpp"
#include "gdiff/trace_io.hpp"
