#pragma once

// Umbrella header. Pull in individual headers instead when compile time
// matters; service.hpp in particular drags in the HTTP stack.

#include "pplxguard/batch.hpp"
#include "pplxguard/config.hpp"
#include "pplxguard/corpus.hpp"
#include "pplxguard/detector.hpp"
#include "pplxguard/errors.hpp"
#include "pplxguard/external_scorer.hpp"
#include "pplxguard/ngram.hpp"
#include "pplxguard/perplexity.hpp"
#include "pplxguard/scorer.hpp"
#include "pplxguard/service.hpp"
#include "pplxguard/stub_scorer.hpp"
#include "pplxguard/tokenizer.hpp"
#include "pplxguard/version.hpp"
