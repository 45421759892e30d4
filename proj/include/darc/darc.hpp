#pragma once

#include "darc/checkpoint.hpp"
#include "darc/data.hpp"
#include "darc/error.hpp"
#include "darc/grad_check.hpp"
#include "darc/metrics.hpp"
#include "darc/model.hpp"
#include "darc/ops.hpp"
#include "darc/report_io.hpp"
#include "darc/run_config.hpp"
#include "darc/tensor.hpp"
#include "darc/training.hpp"
