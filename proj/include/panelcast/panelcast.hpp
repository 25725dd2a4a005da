#pragma once

// Umbrella header for the whole library.

#include "panelcast/batch.hpp"
#include "panelcast/config.hpp"
#include "panelcast/ingest.hpp"
#include "panelcast/layers.hpp"
#include "panelcast/metrics.hpp"
#include "panelcast/model.hpp"
#include "panelcast/optim.hpp"
#include "panelcast/panel.hpp"
#include "panelcast/random.hpp"
#include "panelcast/report.hpp"
#include "panelcast/seq2seq.hpp"
#include "panelcast/stats.hpp"
#include "panelcast/synth.hpp"
#include "panelcast/tensor.hpp"
#include "panelcast/train.hpp"
#include "panelcast/transformer.hpp"
