#pragma once

#include "widedeep/checkpoint.hpp"
#include "widedeep/common.hpp"
#include "widedeep/config.hpp"
#include "widedeep/datagen.hpp"
#include "widedeep/deep.hpp"
#include "widedeep/evaluation.hpp"
#include "widedeep/feature_pipeline.hpp"
#include "widedeep/io.hpp"
#include "widedeep/joint_model.hpp"
#include "widedeep/raw_format.hpp"
#include "widedeep/reports.hpp"
#include "widedeep/serving.hpp"
#include "widedeep/wide.hpp"
