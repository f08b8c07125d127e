#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "canoe/data.hpp"
#include "canoe/error.hpp"

namespace canoe {

// Column-friendly view of a list of window samples that share one context
// length. Sequence fields are row-major [size x context_len].
struct Batch {
  std::size_t size = 0;
  std::size_t context_len = 0;
  std::vector<std::size_t> users;
  std::vector<std::size_t> locations;
  std::vector<std::size_t> slots;
  std::vector<std::size_t> last_slots;
  std::vector<std::size_t> target_locations;
  std::vector<std::size_t> target_slots;
};

inline Batch make_batch(std::span<const data::WindowSample> samples) {
  require(!samples.empty(), "make_batch: empty batch");
  Batch b;
  b.size = samples.size();
  b.context_len = samples.front().context_locations.size();
  require(b.context_len >= 1, "make_batch: empty context");
  for (const auto& s : samples) {
    require(s.context_locations.size() == b.context_len &&
                s.context_slots.size() == b.context_len,
            "make_batch: context lengths differ within a batch");
    b.users.push_back(s.user);
    b.locations.insert(b.locations.end(), s.context_locations.begin(), s.context_locations.end());
    b.slots.insert(b.slots.end(), s.context_slots.begin(), s.context_slots.end());
    b.last_slots.push_back(s.context_slots.back());
    b.target_locations.push_back(s.target_location);
    b.target_slots.push_back(s.target_slot);
  }
  return b;
}

}  // namespace canoe
