#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "specloop/errors.hpp"
#include "specloop/source_model.hpp"
#include "specloop/util.hpp"

namespace specloop {

/// One benchmark instance: a source file with a single specification gap and
/// the method whose contract has to be proved.
struct SpecTask {
  std::string id;
  std::filesystem::path source_path;
  GapKind kind = GapKind::invariant;
  std::optional<std::string> gap_hint;
  std::string target_method;
  std::vector<std::string> tags;
};

/// A task with its source read and the gap located.
struct LoadedTask {
  SpecTask meta;
  AnnotatedDocument doc;

  /// Method handed to the verifier: the manifest's target if given, else the
  /// method the gap belongs to (calling method for contracts, enclosing
  /// method for invariants).
  std::string verify_target() const {
    if (!meta.target_method.empty()) return meta.target_method;
    return doc.gap.kind == GapKind::contract ? doc.gap.calling_method : doc.gap.method_name;
  }
};

inline SpecTask task_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  SpecTask t;
  t.id = j.at("id").get<std::string>();
  std::filesystem::path p = j.at("source_path").get<std::string>();
  t.source_path = p.is_absolute() ? p : base_dir / p;
  t.kind = gap_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("gap_hint") && !j.at("gap_hint").is_null())
    t.gap_hint = j.at("gap_hint").get<std::string>();
  t.target_method = j.value("target_method", std::string());
  if (j.contains("tags")) t.tags = j.at("tags").get<std::vector<std::string>>();
  return t;
}

inline nlohmann::json task_to_json(const SpecTask& t) {
  nlohmann::json j = {
      {"id", t.id},
      {"source_path", t.source_path.string()},
      {"kind", gap_kind_name(t.kind)},
      {"target_method", t.target_method},
      {"tags", t.tags},
  };
  if (t.gap_hint) j["gap_hint"] = *t.gap_hint;
  return j;
}

inline LoadedTask load_task(const SpecTask& task) {
  if (!std::filesystem::exists(task.source_path))
    throw Error(ErrorCode::manifest,
                "task '" + task.id + "': source file missing: " + task.source_path.string());
  LoadedTask loaded;
  loaded.meta = task;
  loaded.doc = parse_document(read_file(task.source_path), task.gap_hint);
  if (loaded.doc.gap.kind != task.kind)
    throw Error(ErrorCode::manifest, "task '" + task.id + "': located a " +
                                         std::string(gap_kind_name(loaded.doc.gap.kind)) +
                                         " gap but manifest says " + gap_kind_name(task.kind));
  return loaded;
}

/// Loads and validates a manifest: a JSON array of task objects. Source paths
/// are resolved relative to the manifest file. Every task must have a unique
/// id, an existing source file and a locatable gap.
inline std::vector<SpecTask> load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::manifest, "cannot parse manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::manifest, "manifest must be a JSON array");

  std::vector<SpecTask> tasks;
  std::set<std::string> seen;
  const std::filesystem::path base = path.parent_path();
  for (const auto& tj : j) {
    SpecTask t;
    try {
      t = task_from_json(tj, base);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::manifest, "bad manifest entry: " + tj.dump() + ": " + e.what());
    }
    if (!seen.insert(t.id).second)
      throw Error(ErrorCode::manifest, "duplicate task id: " + t.id);
    try {
      load_task(t);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::manifest) throw;
      throw Error(ErrorCode::manifest, "task '" + t.id + "': " + e.what());
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace specloop
