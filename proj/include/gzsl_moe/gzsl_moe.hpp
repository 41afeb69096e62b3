#pragma once

#include "numerics.hpp"
#include "layers.hpp"
#include "grad_check.hpp"
#include "moe.hpp"
#include "network.hpp"
#include "prototypes.hpp"
#include "data.hpp"
#include "backbone.hpp"
#include "generator.hpp"
#include "classifier.hpp"
#include "metrics.hpp"
#include "checkpoint.hpp"
#include "pipeline.hpp"
#include "self_check.hpp"
