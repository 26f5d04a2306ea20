#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

// Detection class catalog for the brake-kit line: three disc types and three
// calliper types, six classes in total.
namespace linesight::kit {

enum class PartKind { Disc, Calliper };

inline constexpr int kNumTypes = 3;
inline constexpr int kNumClasses = 2 * kNumTypes;

// Class ids 0..2 are disc types 1..3; ids 3..5 are calliper types 1..3.
constexpr int class_id(PartKind kind, int type_id) {
  return (kind == PartKind::Disc ? 0 : kNumTypes) + (type_id - 1);
}
constexpr PartKind kind_of(int class_id) {
  return class_id < kNumTypes ? PartKind::Disc : PartKind::Calliper;
}
constexpr int type_of(int class_id) { return class_id % kNumTypes + 1; }
constexpr bool valid_class(int class_id) { return class_id >= 0 && class_id < kNumClasses; }

inline std::string kind_name(PartKind kind) {
  return kind == PartKind::Disc ? "disc" : "calliper";
}

inline std::string class_name(int class_id) {
  return kind_name(kind_of(class_id)) + "_" + std::to_string(type_of(class_id));
}

inline std::vector<std::string> class_names() {
  std::vector<std::string> names;
  for (int c = 0; c < kNumClasses; ++c) names.push_back(class_name(c));
  return names;
}

inline std::vector<int> group_classes(PartKind kind) {
  std::vector<int> ids;
  for (int t = 1; t <= kNumTypes; ++t) ids.push_back(class_id(kind, t));
  return ids;
}

}  // namespace linesight::kit
