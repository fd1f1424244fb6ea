#ifndef AMIF_AMIF_HPP
#define AMIF_AMIF_HPP

#include "amif/error.hpp"
#include "amif/tensor_utils.hpp"
#include "amif/wavelet.hpp"
#include "amif/backbone.hpp"
#include "amif/fusion.hpp"
#include "amif/ccwm.hpp"
#include "amif/csamic.hpp"
#include "amif/key_file.hpp"
#include "amif/losses.hpp"
#include "amif/metrics.hpp"
#include "amif/checkpoint.hpp"
#include "amif/pipeline.hpp"
#include "amif/image_io.hpp"
#include "amif/training.hpp"

#endif
