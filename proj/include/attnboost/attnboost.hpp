#pragma once

#include "attnboost/attention.hpp"
#include "attnboost/feature_store.hpp"
#include "attnboost/head_model.hpp"
#include "attnboost/pipeline.hpp"
#include "attnboost/results.hpp"
#include "attnboost/stats.hpp"
#include "attnboost/svg_plot.hpp"
#include "attnboost/taskset_assembly.hpp"
#include "attnboost/taskset_properties.hpp"
