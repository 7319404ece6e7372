#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "specloop/errors.hpp"
#include "specloop/source_model.hpp"
#include "specloop/util.hpp"
#include "specloop/verdict.hpp"

namespace specloop {

/// Fallback token estimator: ceil(bytes / 4). Provider-reported usage takes
/// precedence wherever it is available; this keeps the cost model total when
/// it is not. The cost model cares about consistent accounting, not about any
/// particular tokenizer.
inline long long count_tokens(std::string_view text) {
  return static_cast<long long>((text.size() + 3) / 4);
}

enum class Role { system, user, assistant };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "unknown";
}

inline Role role_from_string(const std::string& s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw Error(ErrorCode::config, "unknown role: " + s);
}

struct Message {
  Role role = Role::user;
  std::string content;
  long long tokens = 0;

  Message() = default;
  Message(Role r, std::string text, long long token_count = -1)
      : role(r), content(std::move(text)) {
    tokens = token_count >= 0 ? token_count : count_tokens(content);
    if (!content.empty() && tokens < 1) tokens = 1;
  }
};

/// Ordered transcript of one oracle conversation. The first message is the
/// system message, the second the initial user prompt; afterwards user and
/// assistant turns alternate strictly, so after k answers there are 2k+1
/// messages.
class Conversation {
 public:
  explicit Conversation(GapKind kind) : task_kind_(kind) {}

  GapKind task_kind() const { return task_kind_; }
  const std::vector<Message>& messages() const { return messages_; }

  void add_system(std::string text) {
    if (!messages_.empty()) throw std::logic_error("system message must come first");
    messages_.emplace_back(Role::system, std::move(text));
  }

  void add_user(std::string text) {
    if (messages_.empty()) throw std::logic_error("system message must come first");
    if (messages_.back().role == Role::user)
      throw std::logic_error("user messages cannot follow each other");
    messages_.emplace_back(Role::user, std::move(text));
  }

  void add_assistant(std::string text, long long token_count = -1) {
    if (messages_.empty() || messages_.back().role != Role::user)
      throw std::logic_error("assistant message must answer a user message");
    messages_.emplace_back(Role::assistant, std::move(text), token_count);
  }

  bool awaiting_answer() const {
    return !messages_.empty() && messages_.back().role == Role::user;
  }

  std::size_t assistant_turns() const {
    std::size_t n = 0;
    for (const auto& m : messages_)
      if (m.role == Role::assistant) ++n;
    return n;
  }

  const std::string& last_assistant_content() const {
    for (auto it = messages_.rbegin(); it != messages_.rend(); ++it)
      if (it->role == Role::assistant) return it->content;
    throw std::logic_error("no assistant message yet");
  }

  const std::string& last_user_content() const {
    for (auto it = messages_.rbegin(); it != messages_.rend(); ++it)
      if (it->role == Role::user) return it->content;
    throw std::logic_error("no user message yet");
  }

  long long prompt_token_sum() const {
    long long sum = 0;
    for (const auto& m : messages_) sum += m.tokens;
    return sum;
  }

  /// Content hash over roles and texts. Any change to any message yields a
  /// different key, so replay fixtures go stale loudly instead of silently.
  std::string content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& m : messages_) {
      h = splitmix64(h ^ fnv1a64(role_name(m.role)));
      h = splitmix64(h ^ fnv1a64(m.content));
    }
    return to_hex(h);
  }

 private:
  GapKind task_kind_;
  std::vector<Message> messages_;
};

/// The four prompt templates for one gap kind, loaded verbatim from the
/// template directory (`prompts/<kind>/{system,initial,feedback_syntax,
/// feedback_semantic}.txt`). Placeholders are literal angle-bracket tokens.
struct PromptBundle {
  std::string system_text;
  std::string initial_text;
  std::string syntactic_feedback_template;
  std::string semantic_feedback_template;
};

namespace placeholders {
inline constexpr std::string_view kFile = "<partially annotated file>";
inline constexpr std::string_view kMethodName = "<method name>";
inline constexpr std::string_view kCalledMethod = "<called method>";
inline constexpr std::string_view kCallingMethod = "<calling method>";
inline constexpr std::string_view kParserError = "<parser error>";
inline constexpr std::string_view kBranchLabels = "<proof branch labels>";
inline constexpr std::string_view kViolatedMethod = "<violated contract method>";
}  // namespace placeholders

/// Expected template hashes (fnv1a64 of the file bytes). Loading checks the
/// shipped files against these so prompt drift shows up in tests.
struct TemplateHash {
  const char* name;
  const char* hash;
};

inline constexpr std::array<TemplateHash, 8> kPinnedTemplateHashes = {{
    {"invariant/system", "1bcf72e818866370"},
    {"invariant/initial", "8ee4c31cabac65a2"},
    {"invariant/feedback_syntax", "e4d9a350fc12c6aa"},
    {"invariant/feedback_semantic", "2992dbcb4f9988aa"},
    {"contract/system", "1bcf72e818866370"},
    {"contract/initial", "b180fe014333e854"},
    {"contract/feedback_syntax", "334b295211fff144"},
    {"contract/feedback_semantic", "b7d793ad31ffcf6d"},
}};

/// Removes duplicate branch labels, keeping first-occurrence order.
inline std::vector<std::string> dedupe_labels(const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  for (const auto& l : labels)
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  return out;
}

/// Loads and renders the prompt templates. Rendering is pure string
/// substitution: same inputs give byte-identical outputs, and document text
/// is embedded unmodified (no escaping).
class PromptLibrary {
 public:
  explicit PromptLibrary(const std::filesystem::path& template_dir) {
    invariant_ = load_bundle(template_dir, GapKind::invariant);
    contract_ = load_bundle(template_dir, GapKind::contract);
    validate_bundle(invariant_, GapKind::invariant);
    validate_bundle(contract_, GapKind::contract);
  }

  const PromptBundle& bundle(GapKind kind) const {
    return kind == GapKind::invariant ? invariant_ : contract_;
  }

  /// Template names ("<kind>/<template>") whose bytes differ from the pinned
  /// hashes. Empty means the shipped prompts are intact.
  std::vector<std::string> drift() const {
    std::vector<std::string> out;
    for (const auto& pinned : kPinnedTemplateHashes) {
      auto it = hashes_.find(pinned.name);
      if (it == hashes_.end() || it->second != pinned.hash) out.emplace_back(pinned.name);
    }
    return out;
  }

  const std::map<std::string, std::string>& template_hashes() const { return hashes_; }

  std::string render_system(GapKind kind) const { return bundle(kind).system_text; }

  std::string render_initial(GapKind kind, const AnnotatedDocument& doc) const {
    if (doc.gap.kind != kind)
      throw Error(ErrorCode::kind_mismatch, "document gap kind does not match prompt kind");
    std::string text = bundle(kind).initial_text;
    replace_all(text, placeholders::kFile, doc.text);
    if (kind == GapKind::invariant) {
      if (doc.gap.method_name.empty())
        throw Error(ErrorCode::missing_placeholder, "enclosing method name unknown");
      replace_all(text, placeholders::kMethodName, doc.gap.method_name);
    } else {
      if (doc.gap.method_name.empty() || doc.gap.calling_method.empty())
        throw Error(ErrorCode::missing_placeholder, "called or calling method name unknown");
      replace_all(text, placeholders::kCalledMethod, doc.gap.method_name);
      replace_all(text, placeholders::kCallingMethod, doc.gap.calling_method);
    }
    return text;
  }

  /// Renders the error feedback for a failed attempt. Only syntax and
  /// semantic verdicts have feedback; success and tool failures do not.
  /// `violated_method` fills the contract-kind semantic placeholder.
  std::string render_feedback(GapKind kind, const Verdict& verdict,
                              const std::string& violated_method = {}) const {
    if (verdict.kind == Verdict::Kind::syntax_error) {
      std::string text = bundle(kind).syntactic_feedback_template;
      replace_all(text, placeholders::kParserError, verdict.parser_message);
      return text;
    }
    if (verdict.kind == Verdict::Kind::semantic_error) {
      std::string text = bundle(kind).semantic_feedback_template;
      auto labels = dedupe_labels(verdict.branch_labels);
      std::string joined;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        joined += labels[i];
        if (i + 1 < labels.size()) joined += '\n';
      }
      replace_all(text, placeholders::kBranchLabels, joined);
      if (kind == GapKind::contract)
        replace_all(text, placeholders::kViolatedMethod, violated_method);
      return text;
    }
    throw Error(ErrorCode::unsupported_verdict,
                std::string("no feedback for verdict kind ") + verdict_kind_name(verdict.kind));
  }

 private:
  PromptBundle load_bundle(const std::filesystem::path& dir, GapKind kind) {
    const std::filesystem::path base = dir / gap_kind_name(kind);
    PromptBundle b;
    b.system_text = load(base / "system.txt", kind, "system");
    b.initial_text = load(base / "initial.txt", kind, "initial");
    b.syntactic_feedback_template = load(base / "feedback_syntax.txt", kind, "feedback_syntax");
    b.semantic_feedback_template =
        load(base / "feedback_semantic.txt", kind, "feedback_semantic");
    return b;
  }

  std::string load(const std::filesystem::path& path, GapKind kind, const std::string& name) {
    if (!std::filesystem::exists(path))
      throw Error(ErrorCode::template_error, "missing template file: " + path.string());
    std::string text = read_file(path);
    hashes_[std::string(gap_kind_name(kind)) + "/" + name] = to_hex(fnv1a64(text));
    return text;
  }

  void validate_bundle(const PromptBundle& b, GapKind kind) const {
    auto require = [&](const std::string& text, std::string_view token, const char* where) {
      if (text.find(token) == std::string::npos)
        throw Error(ErrorCode::template_error,
                    std::string(where) + " template for " + gap_kind_name(kind) +
                        " lacks placeholder " + std::string(token));
    };
    require(b.initial_text, placeholders::kFile, "initial");
    if (kind == GapKind::invariant) {
      require(b.initial_text, placeholders::kMethodName, "initial");
    } else {
      require(b.initial_text, placeholders::kCalledMethod, "initial");
      require(b.initial_text, placeholders::kCallingMethod, "initial");
      require(b.semantic_feedback_template, placeholders::kViolatedMethod, "feedback_semantic");
    }
    require(b.syntactic_feedback_template, placeholders::kParserError, "feedback_syntax");
    require(b.semantic_feedback_template, placeholders::kBranchLabels, "feedback_semantic");
  }

  PromptBundle invariant_;
  PromptBundle contract_;
  std::map<std::string, std::string> hashes_;
};

}  // namespace specloop
