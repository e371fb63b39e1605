#pragma once

#include "qmem/config.hpp"
#include "qmem/detection.hpp"
#include "qmem/emit.hpp"
#include "qmem/error.hpp"
#include "qmem/fitting.hpp"
#include "qmem/memory_channel.hpp"
#include "qmem/parallel.hpp"
#include "qmem/polarization.hpp"
#include "qmem/rng.hpp"
#include "qmem/scenarios.hpp"
#include "qmem/tomography.hpp"
