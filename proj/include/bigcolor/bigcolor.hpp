#pragma once

#include "bigcolor/archive.hpp"
#include "bigcolor/colorspace.hpp"
#include "bigcolor/conditioning.hpp"
#include "bigcolor/config.hpp"
#include "bigcolor/data.hpp"
#include "bigcolor/discriminator.hpp"
#include "bigcolor/encoder.hpp"
#include "bigcolor/feature_extractor.hpp"
#include "bigcolor/generator.hpp"
#include "bigcolor/image_io.hpp"
#include "bigcolor/inference.hpp"
#include "bigcolor/losses.hpp"
#include "bigcolor/metrics.hpp"
#include "bigcolor/model.hpp"
#include "bigcolor/optim.hpp"
#include "bigcolor/runner.hpp"
#include "bigcolor/service.hpp"
#include "bigcolor/training.hpp"
