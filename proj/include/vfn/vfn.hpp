#pragma once

#include "vfn/checkpoint.hpp"
#include "vfn/dataset.hpp"
#include "vfn/error.hpp"
#include "vfn/eval.hpp"
#include "vfn/features.hpp"
#include "vfn/geometry.hpp"
#include "vfn/image_io.hpp"
#include "vfn/imaging.hpp"
#include "vfn/parallel.hpp"
#include "vfn/random.hpp"
#include "vfn/ranker.hpp"
#include "vfn/search.hpp"
#include "vfn/synth.hpp"
#include "vfn/training.hpp"
