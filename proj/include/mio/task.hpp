#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mio {

// The seven restoration tasks, in canonical letter order S B N J R H L.
enum class TaskId : std::uint8_t {
  kSuperResolution = 0,
  kBlur = 1,
  kNoise = 2,
  kJpeg = 3,
  kRain = 4,
  kHaze = 5,
  kLowLight = 6,
};

inline constexpr int kNumTasks = 7;

inline constexpr std::array<TaskId, kNumTasks> kAllTasks = {
    TaskId::kSuperResolution, TaskId::kBlur, TaskId::kNoise, TaskId::kJpeg,
    TaskId::kRain,            TaskId::kHaze, TaskId::kLowLight};

enum class TaskCategory : std::uint8_t {
  kDetailEnhancement,
  kLuminanceAdjustment,
};

enum class Group : std::uint8_t { kInDis, kOutDis };

constexpr int task_index(TaskId t) { return static_cast<int>(t); }
TaskId task_from_index(int index);

char task_letter(TaskId t);
std::optional<TaskId> task_from_letter(char c);

// Column label used in report tables ("SR", "Blur", ...).
std::string_view task_label(TaskId t);

TaskCategory task_category(TaskId t);

// Parses a string of task letters such as "SBNJRHL". Commas and spaces are
// ignored. Throws std::invalid_argument naming the valid letters.
std::vector<TaskId> parse_task_letters(std::string_view letters);
std::string task_letters(const std::vector<TaskId>& tasks);

std::string_view group_name(Group g);
// Accepts "in", "in_dis", "out", "out_dis".
Group parse_group(std::string_view name);

}  // namespace mio
