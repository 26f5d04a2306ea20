#include "linesight/detmetrics.hpp"
#include "linesight/errors.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace linesight::detmetrics {

using nlohmann::json;

std::vector<GroundTruth> ImageAnnotation::ground_truth() const {
  std::vector<GroundTruth> out;
  for (const auto& o : objects) {
    if (!o.probability) out.push_back({o.class_id, o.box});
  }
  return out;
}

std::vector<Detection> ImageAnnotation::detections() const {
  std::vector<Detection> out;
  for (const auto& o : objects) {
    if (o.probability) out.emplace_back(o.box, o.class_id, *o.probability);
  }
  return out;
}

std::string annotation_to_json(const ImageAnnotation& ann) {
  json objects = json::array();
  for (const auto& o : ann.objects) {
    objects.push_back({{"class", o.class_id},
                       {"box", {o.box.x_min(), o.box.y_min(), o.box.x_max(), o.box.y_max()}},
                       {"prob", o.probability ? json(*o.probability) : json(nullptr)}});
  }
  return json{{"image", ann.image}, {"objects", objects}}.dump(2);
}

ImageAnnotation annotation_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    ImageAnnotation ann;
    ann.image = doc.at("image").get<std::string>();
    for (const auto& o : doc.at("objects")) {
      const auto& b = o.at("box");
      if (!b.is_array() || b.size() != 4) {
        throw ValidationError("annotation box must have 4 coordinates");
      }
      std::optional<double> prob;
      if (o.contains("prob") && !o.at("prob").is_null()) prob = o.at("prob").get<double>();
      const int cls = o.at("class").get<int>();
      if (cls < 0) throw ValidationError("annotation class must be non-negative");
      ann.objects.push_back({cls,
                             BoundingBox(b[0].get<double>(), b[1].get<double>(),
                                         b[2].get<double>(), b[3].get<double>()),
                             prob});
      if (prob && !(*prob >= 0.0 && *prob <= 1.0)) {
        throw ValidationError("annotation prob outside [0,1]");
      }
    }
    return ann;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed annotation: ") + e.what());
  }
}

ImageAnnotation load_annotation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return annotation_from_json(ss.str());
}

void save_annotation(const ImageAnnotation& ann, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotation " + path.string());
  out << annotation_to_json(ann) << '\n';
}

}  // namespace linesight::detmetrics
