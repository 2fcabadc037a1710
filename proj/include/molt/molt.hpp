#pragma once

#include "molt/autodiff.hpp"
#include "molt/cam.hpp"
#include "molt/checkpoint.hpp"
#include "molt/dumps.hpp"
#include "molt/encoder.hpp"
#include "molt/error.hpp"
#include "molt/imageops.hpp"
#include "molt/localize.hpp"
#include "molt/manifest.hpp"
#include "molt/multiscale.hpp"
#include "molt/pipeline.hpp"
#include "molt/ppm.hpp"
#include "molt/refine.hpp"
#include "molt/render.hpp"
#include "molt/rng.hpp"
#include "molt/runconfig.hpp"
#include "molt/segment.hpp"
#include "molt/synthetic.hpp"
#include "molt/tensor.hpp"
#include "molt/train.hpp"
