#include "specloop/verifier.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "testutil.hpp"

using namespace specloop;

TEST_CASE("classify_output follows the mock grammar") {
  SECTION("open goals become a semantic error in emission order") {
    auto v = classify_output(0, "OPEN: Invariant Initially Valid\nOPEN: Use Case\n", "");
    CHECK(v.kind == Verdict::Kind::semantic_error);
    CHECK(v.branch_labels ==
          std::vector<std::string>{"Invariant Initially Valid", "Use Case"});
  }
  SECTION("duplicate labels are preserved here; deduplication happens in prompting") {
    auto v = classify_output(0, "OPEN: Use Case\nOPEN: Use Case\n", "");
    CHECK(v.branch_labels == std::vector<std::string>{"Use Case", "Use Case"});
  }
  SECTION("a parse line becomes a syntax error carrying the message") {
    auto v = classify_output(1, "PARSE: Error during JML parsing: Failed to parse JML fragment",
                             "");
    CHECK(v.kind == Verdict::Kind::syntax_error);
    CHECK(v.parser_message ==
          "Error during JML parsing: Failed to parse JML fragment");
  }
  SECTION("CLOSED means success") {
    auto v = classify_output(0, "CLOSED\n", "");
    CHECK(v.kind == Verdict::Kind::success);
  }
  SECTION("nonzero exit with empty output is a tool failure") {
    auto v = classify_output(3, "", "");
    CHECK(v.kind == Verdict::Kind::tool_failure);
  }
  SECTION("stderr counts as output too") {
    auto v = classify_output(1, "", "PARSE: broken");
    CHECK(v.kind == Verdict::Kind::syntax_error);
  }
}

TEST_CASE("classify_output is total over random inputs") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> fragments = {
      "CLOSED", "OPEN: Post (g)", "PARSE: nope", "random noise", "", "exit soon"};
  for (int iter = 0; iter < 200; ++iter) {
    std::string out, err;
    for (int l = 0; l < static_cast<int>(rng() % 5); ++l)
      out += fragments[rng() % fragments.size()] + "\n";
    for (int l = 0; l < static_cast<int>(rng() % 3); ++l)
      err += fragments[rng() % fragments.size()] + "\n";
    auto v = classify_output(static_cast<int>(rng() % 4), out, err);
    bool classified =
        v.kind == Verdict::Kind::success || v.kind == Verdict::Kind::syntax_error ||
        v.kind == Verdict::Kind::semantic_error || v.kind == Verdict::Kind::tool_failure;
    CHECK(classified);
    if (v.kind == Verdict::Kind::semantic_error) CHECK(!v.branch_labels.empty());
  }
}

TEST_CASE("pattern tables load from INI sections with named groups") {
  testutil::TempDir dir;
  auto table_path = dir / "patterns.ini";
  write_file(table_path,
             "# verdict patterns\n"
             "[syntax]\n"
             "pattern = Exception:\\s*(?<message>.*)\n"
             "[semantic]\n"
             "pattern = ^goal still open: (?<label>.*)$\n"
             "[success]\n"
             "pattern = ^proof closed\\.$\n");
  auto table = PatternTable::load(table_path);

  auto syntax = classify_output(1, "some.tool.Exception: unexpected token ';'", "", table);
  CHECK(syntax.kind == Verdict::Kind::syntax_error);
  CHECK(syntax.parser_message == "unexpected token ';'");

  auto semantic = classify_output(0, "goal still open: Body Preserves Invariant\n", "", table);
  CHECK(semantic.kind == Verdict::Kind::semantic_error);
  CHECK(semantic.branch_labels == std::vector<std::string>{"Body Preserves Invariant"});

  auto success = classify_output(0, "proof closed.\n", "", table);
  CHECK(success.kind == Verdict::Kind::success);

  auto unknown = classify_output(0, "???", "", table);
  CHECK(unknown.kind == Verdict::Kind::tool_failure);
  CHECK(unknown.raw_output == "???");
}

TEST_CASE("subprocess verifier drives a command and classifies its output") {
  testutil::TempDir dir;
  auto doc = parse_document(testutil::contract_source(), std::string("g"));
  AnnotationCandidate good(testutil::correct_contract_jml(), GapKind::contract);
  AnnotationCandidate bad("/*@ ensures \\result == x; @*/", GapKind::contract);

  // Stand-in prover: accepts drafts containing the doubling contract.
  auto prover = dir / "prover.sh";
  write_file(prover,
             "#!/bin/sh\n"
             "if grep -q 'ensures \\\\result == 2\\*x' \"$1\"; then\n"
             "  echo CLOSED\n"
             "else\n"
             "  echo 'OPEN: Post (g)'\n"
             "fi\n");
  std::filesystem::permissions(prover, std::filesystem::perms::owner_all);

  SubprocessVerifier verifier(prover.string() + " {file}", PatternTable::mock_grammar(), 10);
  CHECK(verifier.verify(splice(doc, good), "f").kind == Verdict::Kind::success);
  auto verdict = verifier.verify(splice(doc, bad), "f");
  CHECK(verdict.kind == Verdict::Kind::semantic_error);
  CHECK(verdict.branch_labels == std::vector<std::string>{"Post (g)"});
}

TEST_CASE("subprocess verifier maps crashes and timeouts to tool failure") {
  SECTION("crash") {
    SubprocessVerifier verifier("exit 7 # {file}", PatternTable::mock_grammar(), 5);
    CHECK(verifier.verify("class A {}", "f").kind == Verdict::Kind::tool_failure);
  }
  SECTION("timeout") {
    SubprocessVerifier verifier("sleep 5 # {file}", PatternTable::mock_grammar(), 1);
    auto v = verifier.verify("class A {}", "f");
    CHECK(v.kind == Verdict::Kind::tool_failure);
    CHECK(v.raw_output.find("timed out") != std::string::npos);
  }
}

TEST_CASE("subprocess verifier requires the {file} placeholder") {
  CHECK_THROWS_AS(SubprocessVerifier("prover --in draft.java", PatternTable::mock_grammar()),
                  Error);
}

TEST_CASE("mock rules dispatch in declaration order") {
  AnnotationCandidate good(testutil::correct_contract_jml(), GapKind::contract);
  AnnotationCandidate weak("/*@ ensures \\result == x; @*/", GapKind::contract);
  AnnotationCandidate broken("/*@ ensures ((x; @*/", GapKind::contract);

  std::vector<MockRule> rules = {
      {MockRule::Match::predicate, "unbalanced_parens",
       Verdict::syntax_error("Error during JML parsing: unbalanced parentheses")},
      {MockRule::Match::exact, testutil::correct_contract_jml(), Verdict::success()},
  };

  CHECK(mock_verify(rules, "", good).kind == Verdict::Kind::success);
  CHECK(mock_verify(rules, "", broken).kind == Verdict::Kind::syntax_error);

  auto fallback = mock_verify(rules, "", weak);
  CHECK(fallback.kind == Verdict::Kind::semantic_error);
  CHECK(fallback.branch_labels == std::vector<std::string>{"Post (unmatched)"});
}

TEST_CASE("substring rules match anywhere in the candidate") {
  std::vector<MockRule> rules = {
      {MockRule::Match::substring, "\\old", Verdict::semantic_error({"Use Case"})},
  };
  AnnotationCandidate with_old("/*@ ensures \\result == \\old(x); @*/", GapKind::contract);
  CHECK(mock_verify(rules, "", with_old).branch_labels ==
        std::vector<std::string>{"Use Case"});
}

TEST_CASE("mock verifier loads rules from JSON") {
  testutil::TempDir dir;
  auto rules_path = dir / "rules.json";
  write_file(rules_path, R"([
    {"match": "exact",
     "pattern": "/*@ normal_behavior ensures \\result == 2*x; assignable \\nothing; @*/",
     "verdict": {"kind": "success"}},
    {"match": "substring", "pattern": "loop_invariant",
     "verdict": {"kind": "semantic_error", "labels": ["Body Preserves Invariant"]}},
    {"match": "predicate", "pattern": "missing_semicolon",
     "verdict": {"kind": "syntax_error", "message": "Error during JML parsing: expected ';'"}}
  ])");
  MockVerifier verifier = MockVerifier::load(rules_path);
  REQUIRE(verifier.rules().size() == 3);

  AnnotationCandidate good(testutil::correct_contract_jml(), GapKind::contract);
  CHECK(verifier.check("", good, "f").kind == Verdict::Kind::success);

  AnnotationCandidate no_semi("/*@ ensures true @*/", GapKind::contract);
  auto v = verifier.check("", no_semi, "f");
  CHECK(v.kind == Verdict::Kind::syntax_error);
  CHECK(v.parser_message == "Error during JML parsing: expected ';'");
}

TEST_CASE("verdict factories enforce kind-specific fields") {
  CHECK_THROWS_AS(Verdict::semantic_error({}), Error);
  auto v = Verdict::syntax_error("msg");
  CHECK(v.branch_labels.empty());
  CHECK(Verdict::success().is_success());
  CHECK_FALSE(Verdict::tool_failure().is_error());
  CHECK(Verdict::syntax_error("m").is_error());
}
