#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/corpus.hpp"
#include "sage/llm.hpp"
#include "sage/providers.hpp"

namespace sage {

/// Process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 1,
    exit_data = 2,
    exit_provider = 3,
    exit_partial = 4,
};

/// Everything a command needs. Read from a JSON file, then overridden by
/// command-line flags.
struct AppConfig {
    std::filesystem::path dataset;
    std::optional<DataFormat> format;  // inferred from the extension when empty
    Normalization normalization = Normalization::mean_over_5;

    std::vector<std::string> scorers = {"llm"};
    StrategyKind strategy = StrategyKind::cot_0to1;
    std::size_t runs = 3;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    ExemplarSource exemplar_source = ExemplarSource::stratified;
    std::filesystem::path rationales;  // JSON object: pair id -> rationale
    std::filesystem::path templates;   // directory; empty uses built-in prompts

    // provider
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4";
    std::string api_key_env = "SAGE_API_KEY";
    std::size_t max_in_flight = 4;
    std::size_t requests_per_minute = 0;  // 0 = unlimited
    int retry_attempts = 3;
    int timeout_seconds = 120;
    std::string mock;  // ruleset path or "echo-benchmark"

    // embedding scorers
    std::filesystem::path embeddings;        // sentence vectors, JSONL
    std::filesystem::path token_embeddings;  // per-token vectors, JSONL
    std::string embedding_model;             // HTTP embeddings when no file is given
    std::size_t embedding_dimension = 0;

    std::filesystem::path cache_dir = ".sage-cache";
    std::filesystem::path output_dir = "sage-out";
    double threshold = 0.7;

    std::size_t k = 6;
    std::uint64_t seed = 0;

    static AppConfig from_json(const nlohmann::json& j);
    static AppConfig load(const std::filesystem::path& path);
    /// Resolved settings; the API key itself is never included.
    nlohmann::json to_json() const;
};

/// Valid values for --scorer.
const std::vector<std::string>& scorer_names();

/// Output label for a scorer: "llm-<strategy>" or the scorer name.
std::string scorer_label(const std::string& scorer, StrategyKind strategy);

/// Hooks for tests; unset members use the real implementations.
struct AppHooks {
    std::function<std::shared_ptr<Transport>(const AppConfig&, const Dataset&)> transport;
    std::function<void(std::chrono::milliseconds)> sleep;
    std::function<std::optional<std::string>(const std::string&)> getenv;
};

/// Chat transport the config asks for: a mock when `mock` is set, HTTP otherwise.
std::shared_ptr<Transport> make_transport(const AppConfig& config, const Dataset& dataset, const AppHooks& hooks = {});

/// Parses argv-style arguments (without the program name) and runs the
/// command. Never throws; returns an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const AppHooks& hooks = {});

}  // namespace sage
