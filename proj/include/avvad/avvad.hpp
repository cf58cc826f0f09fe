// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include "avvad/config.hpp"
#include "avvad/dataset.hpp"
#include "avvad/error.hpp"
#include "avvad/events.hpp"
#include "avvad/features.hpp"
#include "avvad/labels.hpp"
#include "avvad/loss.hpp"
#include "avvad/metrics.hpp"
#include "avvad/model.hpp"
#include "avvad/nn.hpp"
#include "avvad/plot.hpp"
#include "avvad/rng.hpp"
#include "avvad/run_manifest.hpp"
#include "avvad/sha256.hpp"
#include "avvad/synth.hpp"
#include "avvad/tensor.hpp"
#include "avvad/tensor_archive.hpp"
#include "avvad/train.hpp"
#include "avvad/wav.hpp"
