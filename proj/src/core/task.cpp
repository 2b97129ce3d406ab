#include "mio/task.hpp"

#include <cctype>
#include <stdexcept>

namespace mio {

namespace {
constexpr std::string_view kLetters = "SBNJRHL";
constexpr std::array<std::string_view, kNumTasks> kLabels = {
    "SR", "Blur", "Noise", "JPEG", "Rain", "Haze", "Low-Light"};
}  // namespace

TaskId task_from_index(int index) {
  if (index < 0 || index >= kNumTasks) {
    throw std::invalid_argument("task index out of range: " + std::to_string(index));
  }
  return static_cast<TaskId>(index);
}

char task_letter(TaskId t) { return kLetters[task_index(t)]; }

std::optional<TaskId> task_from_letter(char c) {
  const auto pos = kLetters.find(c);
  if (pos == std::string_view::npos) return std::nullopt;
  return static_cast<TaskId>(pos);
}

std::string_view task_label(TaskId t) { return kLabels[task_index(t)]; }

TaskCategory task_category(TaskId t) {
  return (t == TaskId::kHaze || t == TaskId::kLowLight)
             ? TaskCategory::kLuminanceAdjustment
             : TaskCategory::kDetailEnhancement;
}

std::vector<TaskId> parse_task_letters(std::string_view letters) {
  std::vector<TaskId> out;
  for (char c : letters) {
    if (c == ',' || c == ' ') continue;
    auto t = task_from_letter(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (!t) {
      throw std::invalid_argument(std::string("unknown task letter '") + c +
                                  "'; valid letters are S,B,N,J,R,H,L");
    }
    out.push_back(*t);
  }
  return out;
}

std::string task_letters(const std::vector<TaskId>& tasks) {
  std::string s;
  for (auto t : tasks) s.push_back(task_letter(t));
  return s;
}

std::string_view group_name(Group g) {
  return g == Group::kInDis ? "in_dis" : "out_dis";
}

Group parse_group(std::string_view name) {
  if (name == "in" || name == "in_dis") return Group::kInDis;
  if (name == "out" || name == "out_dis") return Group::kOutDis;
  throw std::invalid_argument("unknown group '" + std::string(name) +
                              "'; expected in|out");
}

}  // namespace mio
