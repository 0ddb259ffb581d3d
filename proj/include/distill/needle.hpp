#pragma once

#include <cstdint>
#include <vector>

#include "distill/model.hpp"

namespace distill {

// Synthetic recall probes: hide one contiguous span in filler and check that
// top-k selection recovers it.

struct PlantedNeedleSpec {
    std::size_t haystack_len{0};          // total prompt length n
    std::vector<std::int32_t> needle_ids; // the span, in order
    std::size_t depth_pct{50};            // 0 = span at the front, 100 = at the back
    std::uint64_t seed{0};
};

struct PlantedPrompt {
    std::vector<std::int32_t> tokens;
    std::size_t span_start{0};
    std::size_t span_len{0};
    std::vector<std::size_t> expected_indices; // span_start .. span_start+span_len-1
};

// Fill a prompt with ids sampled from [0, vocab_size) excluding the needle
// ids, then overwrite the span at the requested depth. The span is therefore
// the unique occurrence of those ids. For use against any model bundle;
// recovery quality depends on that model.
PlantedPrompt plant_needle(const PlantedNeedleSpec& spec, std::int32_t vocab_size);

// A hand-built two-layer model plus prompt on which selection recovery is
// exact by construction, not just likely:
//  - filler tokens embed to the zero vector, so their keys score 0;
//  - each span token embeds to a unit vector that the rotary map turns into
//    one fixed direction u, so all span keys coincide at u;
//  - the final token (a cue token when the span sits earlier, the span's own
//    last token at depth 100) produces a query along u.
// Every span key then scores identically positive against the last-token
// query and everything else scores 0, so top-k with k = span length returns
// exactly the span. Token ids are shuffled by seed so recovery cannot come
// from id values. Selection is wired for the second layer (index 1).
struct OracleNeedle {
    ModelBundle bundle;
    PlantedPrompt prompt;
    std::size_t select_layer{1};
};

OracleNeedle make_oracle_needle(std::size_t haystack_len, std::size_t needle_len,
                                std::size_t depth_pct, std::uint64_t seed);

} // namespace distill
