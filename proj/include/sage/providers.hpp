#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace sage {

// ------------------------------------------------------------------ chat wire types

enum class Role { system, user, assistant };

std::string_view to_string(Role role);

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

/// OpenAI-compatible chat-completions request. Scoring always runs at
/// temperature 0 with a 1200-token completion budget.
struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1200;
};

nlohmann::json to_json(const ChatRequest& request);
ChatRequest chat_request_from_json(const nlohmann::json& body);

/// Sorted-key serialization; message contents are kept byte-exact.
std::string canonical_bytes(const ChatRequest& request);

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason reason);

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
    std::optional<Usage> usage;
    std::vector<std::string> warnings;  // e.g. truncation
    bool from_cache = false;
};

// ------------------------------------------------------------------ embeddings

template <typename Scalar>
struct EmbeddingVectorT {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> values;
    std::string source;

    Eigen::Index dimension() const noexcept { return values.size(); }
};

using EmbeddingVector = EmbeddingVectorT<double>;

// ------------------------------------------------------------------ cache

/// SHA-256 over the backend id and the canonical request bytes.
std::string cache_key(std::string_view backend_id, std::string_view canonical_request);

/// Write-once content-addressed store. With a directory, one JSON file per
/// key, created by atomic link so concurrent writers of the same key keep the
/// first copy. Without a directory the store is in-memory.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir = {});

    std::optional<nlohmann::json> get(const std::string& key) const;
    /// False when the key already existed; the stored entry is left untouched.
    bool put(const std::string& key, nlohmann::json payload);

    std::vector<std::string> keys() const;
    std::size_t purge();
    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path file_for(const std::string& key) const;

    std::filesystem::path dir_;
    mutable std::mutex mutex_;
    std::map<std::string, nlohmann::json> memory_;
};

// ------------------------------------------------------------------ transport

struct HttpReply {
    int status = 0;  // 0: connection-level failure
    std::string body;
};

/// POSTs JSON bodies to paths relative to a backend base URL. Counts calls
/// so tests can assert on network traffic.
class Transport {
public:
    virtual ~Transport() = default;

    HttpReply post(const std::string& path, const std::string& body) {
        ++calls_;
        return do_post(path, body);
    }

    std::size_t calls() const noexcept { return calls_.load(); }

protected:
    virtual HttpReply do_post(const std::string& path, const std::string& body) = 0;

private:
    std::atomic<std::size_t> calls_{0};
};

class HttpTransport : public Transport {
public:
    /// base_url such as "https://api.openai.com/v1"; a non-empty api_key is
    /// sent as a bearer token.
    HttpTransport(std::string base_url, std::string api_key, std::chrono::seconds timeout = std::chrono::seconds(120));

protected:
    HttpReply do_post(const std::string& path, const std::string& body) override;

private:
    std::string origin_;
    std::string prefix_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

// ------------------------------------------------------------------ mock backend

struct MockRule {
    std::string match;  // substring of the concatenated prompt; empty matches all
    std::string reply;
    int status = 200;
    std::string finish_reason = "stop";
};

std::vector<MockRule> load_mock_rules(const std::filesystem::path& path);

/// A pair the echo-benchmark mock can recognise in a prompt.
struct EchoEntry {
    std::string student;
    std::string expert;
    double benchmark;
};

/// Offline chat backend speaking the OpenAI chat-completions shape.
///
/// Ruleset mode answers with the first rule whose match occurs in the
/// prompt. Echo-benchmark mode finds the pair being scored (the one whose
/// student text occurs last in the prompt) and replies with its benchmark in
/// the response shape the prompt asks for: a delimited CoT answer, a 1-5
/// value, or a bare 0-1 value.
class MockTransport : public Transport {
public:
    static std::shared_ptr<MockTransport> with_rules(std::vector<MockRule> rules);
    static std::shared_ptr<MockTransport> echo_benchmark(std::vector<EchoEntry> entries);

    /// Queue HTTP statuses returned (with an error body) before normal replies.
    void fail_next(std::vector<int> statuses);
    std::vector<std::string> received() const;

protected:
    HttpReply do_post(const std::string& path, const std::string& body) override;

private:
    MockTransport() = default;
    std::string echo_reply(const std::string& prompt, int& status) const;

    std::vector<MockRule> rules_;
    std::vector<EchoEntry> echo_;
    bool echo_mode_ = false;
    mutable std::mutex mutex_;
    std::deque<int> failures_;
    std::vector<std::string> received_;
};

// ------------------------------------------------------------------ pacing

/// Bounds concurrent requests and, optionally, requests per window.
class RateLimiter {
public:
    explicit RateLimiter(std::size_t max_in_flight = 1, std::size_t per_window = 0,
                         std::chrono::milliseconds window = std::chrono::minutes(1));

    class Permit {
    public:
        explicit Permit(RateLimiter* owner) : owner_(owner) {}
        Permit(Permit&& other) noexcept : owner_(std::exchange(other.owner_, nullptr)) {}
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;
        Permit& operator=(Permit&&) = delete;
        ~Permit() {
            if (owner_) owner_->release();
        }

    private:
        RateLimiter* owner_;
    };

    Permit acquire();
    std::size_t peak_in_flight() const;
    std::size_t max_in_flight() const noexcept { return max_in_flight_; }

private:
    void release();

    std::size_t max_in_flight_;
    std::size_t per_window_;
    std::chrono::milliseconds window_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t in_flight_ = 0;
    std::size_t peak_ = 0;
    std::deque<std::chrono::steady_clock::time_point> starts_;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for
};

/// Retry on connection failures, 429 and 5xx.
bool retryable_status(int status);

/// Shared pacing/caching plumbing for one backend.
struct BackendContext {
    std::string id;  // part of every cache key
    std::shared_ptr<Transport> transport;
    std::shared_ptr<ResponseCache> cache;
    std::shared_ptr<RateLimiter> limiter;
    RetryPolicy retry;

    /// POST with rate limiting and retries; throws ProviderError when exhausted.
    HttpReply send(const std::string& path, const std::string& body) const;
};

/// Chat-completions backend handle. Safe to share across threads.
class ChatClient {
public:
    explicit ChatClient(BackendContext context);

    ChatResponse complete(const ChatRequest& request) const;

    const std::string& id() const noexcept { return context_.id; }
    Transport& transport() const { return *context_.transport; }
    const RateLimiter& limiter() const { return *context_.limiter; }
    std::size_t max_in_flight() const { return context_.limiter->max_in_flight(); }

private:
    BackendContext context_;
};

inline ChatResponse complete(const ChatRequest& request, const ChatClient& backend) {
    return backend.complete(request);
}

/// Sentence-embedding backend handle.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual const std::string& id() const = 0;
    virtual Eigen::Index dimension() const = 0;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
};

inline EmbeddingVector embed(std::string_view text, const EmbeddingProvider& provider) {
    return provider.embed(text);
}

/// Reads JSONL rows {"text_sha256": hex, "vector": [...]}.
class FileEmbeddingProvider : public EmbeddingProvider {
public:
    explicit FileEmbeddingProvider(const std::filesystem::path& path);
    /// In-memory table keyed by raw text; hashes are computed here.
    FileEmbeddingProvider(std::string id, const std::map<std::string, std::vector<double>>& table);

    const std::string& id() const override { return id_; }
    Eigen::Index dimension() const override { return dimension_; }
    EmbeddingVector embed(std::string_view text) const override;

    bool contains(std::string_view text) const;

private:
    void insert(const std::string& hash, const std::vector<double>& values);

    std::string id_;
    Eigen::Index dimension_ = 0;
    std::map<std::string, Eigen::VectorXd> table_;
};

/// OpenAI-compatible /embeddings client with a declared output dimension.
class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(BackendContext context, std::string model, Eigen::Index dimension);

    const std::string& id() const override { return context_.id; }
    Eigen::Index dimension() const override { return dimension_; }
    EmbeddingVector embed(std::string_view text) const override;

private:
    BackendContext context_;
    std::string model_;
    Eigen::Index dimension_;
};

}  // namespace sage
