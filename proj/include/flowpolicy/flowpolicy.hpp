#pragma once

#include "flowpolicy/checkpoint.hpp"
#include "flowpolicy/config.hpp"
#include "flowpolicy/distill.hpp"
#include "flowpolicy/gm.hpp"
#include "flowpolicy/io.hpp"
#include "flowpolicy/metrics.hpp"
#include "flowpolicy/numeric.hpp"
#include "flowpolicy/ode.hpp"
#include "flowpolicy/policy.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/runner.hpp"
#include "flowpolicy/samples.hpp"
#include "flowpolicy/schedule.hpp"
#include "flowpolicy/student.hpp"
#include "flowpolicy/teacher.hpp"
