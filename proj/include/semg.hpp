#pragma once

#include "semg/errors.hpp"
#include "semg/matrix.hpp"
#include "semg/protocol.hpp"
#include "semg/filter.hpp"
#include "semg/spectral.hpp"
#include "semg/recording.hpp"
#include "semg/synth.hpp"
#include "semg/preprocess.hpp"
#include "semg/features.hpp"
#include "semg/models.hpp"
#include "semg/quality.hpp"
#include "semg/device.hpp"
#include "semg/online.hpp"
#include "semg/harness.hpp"
#include "semg/service.hpp"
