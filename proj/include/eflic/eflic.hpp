#pragma once

#include "eflic/analysis.hpp"
#include "eflic/bitstream.hpp"
#include "eflic/codebook.hpp"
#include "eflic/codec.hpp"
#include "eflic/common.hpp"
#include "eflic/experiments.hpp"
#include "eflic/hyper.hpp"
#include "eflic/io.hpp"
#include "eflic/latent.hpp"
#include "eflic/predictor.hpp"
#include "eflic/random.hpp"
#include "eflic/rans.hpp"
#include "eflic/schemes.hpp"
#include "eflic/training.hpp"
#include "eflic/version.hpp"
