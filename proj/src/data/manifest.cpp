#include "stan/data/manifest.hpp"

#include "stan/data/clip_io.hpp"
#include "stan/errors.hpp"
#include "stan/serialize.hpp"

namespace stan {

std::string to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Usage: return "usage";
    case ErrorCategory::MalformedManifest: return "malformed-manifest";
    case ErrorCategory::ShapeMismatch: return "shape-mismatch";
    case ErrorCategory::UnknownName: return "unknown-name";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::InvalidConfig: return "invalid-config";
  }
  return "?";
}

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw StanError(ErrorCategory::MalformedManifest, "manifest: " + what);
}

std::string bits_to_string(const std::vector<std::uint8_t>& bits) {
  std::string s(bits.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) s[i] = '1';
  return s;
}

}  // namespace

std::size_t DatasetManifest::index_of(const std::string& clip_id) const {
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (clips[i].id == clip_id) return i;
  throw StanError(ErrorCategory::UnknownName, "no clip named '" + clip_id + "' in manifest");
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "stan-manifest";
  j["version"] = kManifestVersion;
  j["dataset_id"] = m.dataset_id;
  j["num_classes"] = m.num_classes;
  j["height"] = m.height;
  j["width"] = m.width;
  j["generator"] = m.generator;
  auto& clips = j["clips"] = nlohmann::json::array();
  for (const auto& c : m.clips) {
    nlohmann::json e;
    e["id"] = c.id;
    e["path"] = c.path;
    e["label"] = c.label;
    e["group"] = c.group;
    e["frames"] = c.frames;
    e["important"] = bits_to_string(c.important);
    auto& kp = e["keypoints"] = nlohmann::json::array();
    for (const auto& frame : c.keypoints.frames) {
      auto joints = nlohmann::json::array();
      for (const auto& jt : frame) joints.push_back({jt.joint_id, jt.x, jt.y, jt.confidence});
      kp.push_back(std::move(joints));
    }
    clips.push_back(std::move(e));
  }
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    if (!j.is_object() || j.value("format", "") != "stan-manifest") malformed("not a stan-manifest document");
    if (j.at("version").get<int>() != kManifestVersion) {
      malformed("unsupported version " + j.at("version").dump());
    }
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.generator = j.value("generator", nlohmann::json::object());
    if (m.num_classes == 0 || m.height == 0 || m.width == 0) malformed("num_classes, height and width must be positive");
    for (const auto& e : j.at("clips")) {
      ClipEntry c;
      c.id = e.at("id").get<std::string>();
      c.path = e.at("path").get<std::string>();
      c.label = e.at("label").get<std::size_t>();
      c.group = e.at("group").get<std::size_t>();
      c.frames = e.at("frames").get<std::size_t>();
      const auto bits = e.at("important").get<std::string>();
      for (char ch : bits) {
        if (ch != '0' && ch != '1') malformed("clip " + c.id + ": importance mask must be a 0/1 string");
        c.important.push_back(ch == '1');
      }
      for (const auto& frame : e.at("keypoints")) {
        std::vector<Joint> joints;
        for (const auto& jt : frame) {
          if (!jt.is_array() || jt.size() != 4) malformed("clip " + c.id + ": joint must be [id, x, y, confidence]");
          joints.push_back({jt[0].get<int>(), jt[1].get<double>(), jt[2].get<double>(), jt[3].get<double>()});
        }
        c.keypoints.frames.push_back(std::move(joints));
      }
      if (c.frames == 0) malformed("clip " + c.id + ": zero frames");
      if (c.label >= m.num_classes) {
        malformed("clip " + c.id + ": label " + std::to_string(c.label) + " outside " +
                  std::to_string(m.num_classes) + " classes");
      }
      if (c.important.size() != c.frames) {
        malformed("clip " + c.id + ": importance mask has " + std::to_string(c.important.size()) +
                  " entries for " + std::to_string(c.frames) + " frames");
      }
      if (c.keypoints.frames.size() != c.frames) {
        malformed("clip " + c.id + ": keypoint track has " + std::to_string(c.keypoints.frames.size()) +
                  " frames for " + std::to_string(c.frames));
      }
      for (const auto& other : m.clips)
        if (other.id == c.id) malformed("duplicate clip id " + c.id);
      m.clips.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& ex) {
    malformed(ex.what());
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  write_file_atomic(path, manifest_to_json(manifest).dump(2) + "\n");
}

DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& ex) {
    throw StanError(ErrorCategory::Io, ex.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    malformed(std::string("not valid JSON: ") + ex.what());
  }
  auto m = manifest_from_json(j);
  if (check_files) {
    const auto base = path.parent_path();
    for (const auto& c : m.clips) {
      Shape shape;
      try {
        shape = read_clip_shape(base / c.path);
      } catch (const std::exception& ex) {
        malformed("clip " + c.id + ": " + ex.what());
      }
      const Shape expected{3, c.frames, m.height, m.width};
      if (shape != expected) {
        malformed("clip " + c.id + ": file extents " + to_string(shape) + " differ from declared " +
                  to_string(expected));
      }
    }
  }
  return m;
}

}  // namespace stan
