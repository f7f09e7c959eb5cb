#pragma once

#include "rsplat/config.hpp"
#include "rsplat/core.hpp"
#include "rsplat/scenegen.hpp"
#include "rsplat/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rsplat {

// Images. Values are clamped to [0, 1] and rounded to 8 bits on write.
void write_png(const std::string& path, const ImageBuffer& img);
ImageBuffer read_png(const std::string& path);
/// Grayscale, 255 = 1.0.
void write_mask_png(const std::string& path, const TransientMask& mask);
TransientMask read_mask_png(const std::string& path);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

// Dataset directory: cameras.txt, points.txt, train/, train_mask/, test/.
// Camera ids are global: training views first, then test views.
void write_dataset(const std::string& dir, const DatasetBundle& data);
/// Validates every file; rotations drifting from orthonormal by more than
/// 1e-6 are re-orthonormalized. Errors name the offending file, line or view.
DatasetBundle read_dataset(const std::string& dir);
/// Number of rotations repaired by the most recent read_dataset call on this thread.
std::size_t last_reorthonormalized_count();

// Checkpoints.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& context = "checkpoint");
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

// Configs: `key = value` lines, '#' starts a comment. `schedule_scale`, if
// present, selects the derived defaults before the other keys apply.
TrainConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
TrainConfig parse_config(const std::string& path);
/// Every key, one per line, in a form parse_config_text reads back exactly.
std::string format_config(const TrainConfig& cfg);

}  // namespace rsplat
