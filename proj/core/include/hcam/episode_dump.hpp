#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "hcam/ballet.hpp"
#include "hcam/pai.hpp"
#include "hcam/task_model.hpp"

namespace hcam {

/// One JSON object per episode, without a trailing newline. Absent token
/// components are written as null.
std::string episode_json(const BalletEpisode& episode, std::uint64_t seed);
std::string episode_json(const PaiEpisode& episode, std::uint64_t seed);

/// Writes `count` episodes as JSON lines; episode i uses mix_seed(seed, i),
/// matching generate_batch.
void dump_episodes(std::ostream& out, const TaskSpec& task, std::uint64_t seed,
                   std::size_t count);

}  // namespace hcam
