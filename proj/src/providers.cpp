#include "sage/providers.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "sage/error.hpp"
#include "sage/text.hpp"

namespace sage {

using nlohmann::json;

std::string_view to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

std::string_view to_string(FinishReason reason) {
    switch (reason) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "error";
}

namespace {

Role parse_role(const std::string& s) {
    if (s == "system") return Role::system;
    if (s == "assistant") return Role::assistant;
    if (s == "user") return Role::user;
    throw ValidationError("unknown chat role '" + s + "'");
}

FinishReason parse_finish(const std::string& s) {
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    return FinishReason::stop;
}

std::string now_iso8601() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr)));
}

std::string excerpt(const std::string& s, std::size_t n = 200) {
    return s.size() <= n ? s : s.substr(0, n) + "...";
}

}  // namespace

json to_json(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return {{"model", request.model},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
}

ChatRequest chat_request_from_json(const json& body) {
    ChatRequest r;
    r.model = body.value("model", "");
    for (const auto& m : body.at("messages")) {
        r.messages.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    r.temperature = body.value("temperature", 0.0);
    r.max_tokens = body.value("max_tokens", 1200);
    return r;
}

std::string canonical_bytes(const ChatRequest& request) {
    // nlohmann::json objects keep keys sorted; strings are emitted verbatim
    // apart from JSON escaping.
    return to_json(request).dump();
}

std::string cache_key(std::string_view backend_id, std::string_view canonical_request) {
    std::string bytes;
    bytes.reserve(backend_id.size() + 1 + canonical_request.size());
    bytes.append(backend_id);
    bytes.push_back('\0');
    bytes.append(canonical_request);
    return sha256_hex(bytes);
}

// ------------------------------------------------------------------ cache

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::file_for(const std::string& key) const { return dir_ / (key + ".json"); }

std::optional<json> ResponseCache::get(const std::string& key) const {
    if (dir_.empty()) {
        std::lock_guard lock(mutex_);
        auto it = memory_.find(key);
        if (it == memory_.end()) return std::nullopt;
        return it->second;
    }
    std::ifstream in(file_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    try {
        return json::parse(in);
    } catch (const json::parse_error&) {
        throw IntegrityError("corrupt cache entry " + file_for(key).string());
    }
}

bool ResponseCache::put(const std::string& key, json payload) {
    if (dir_.empty()) {
        std::lock_guard lock(mutex_);
        return memory_.emplace(key, std::move(payload)).second;
    }
    const auto target = file_for(key);
    if (std::filesystem::exists(target)) return false;
    thread_local std::mt19937_64 rng(std::random_device{}());
    const auto tmp = dir_ / fmt::format(".tmp-{}-{:016x}", key, rng());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write cache file " + tmp.string());
        out << payload.dump(2) << '\n';
    }
    std::error_code ec;
    std::filesystem::create_hard_link(tmp, target, ec);
    std::filesystem::remove(tmp);
    if (ec == std::errc::file_exists) return false;
    if (ec) throw Error(fmt::format("cannot publish cache entry {}: {}", target.string(), ec.message()));
    return true;
}

std::vector<std::string> ResponseCache::keys() const {
    std::vector<std::string> out;
    if (dir_.empty()) {
        std::lock_guard lock(mutex_);
        for (const auto& [k, v] : memory_) out.push_back(k);
        return out;
    }
    if (!std::filesystem::exists(dir_)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && entry.path().extension() == ".json" && !name.starts_with(".tmp-")) {
            out.push_back(entry.path().stem().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t ResponseCache::purge() {
    if (dir_.empty()) {
        std::lock_guard lock(mutex_);
        const auto n = memory_.size();
        memory_.clear();
        return n;
    }
    std::size_t n = 0;
    for (const auto& key : keys()) n += std::filesystem::remove(file_for(key)) ? 1 : 0;
    return n;
}

// ------------------------------------------------------------------ pacing

RateLimiter::RateLimiter(std::size_t max_in_flight, std::size_t per_window, std::chrono::milliseconds window)
    : max_in_flight_(max_in_flight == 0 ? 1 : max_in_flight), per_window_(per_window), window_(window) {}

RateLimiter::Permit RateLimiter::acquire() {
    std::unique_lock lock(mutex_);
    while (true) {
        const auto now = std::chrono::steady_clock::now();
        while (!starts_.empty() && now - starts_.front() >= window_) starts_.pop_front();
        if (in_flight_ >= max_in_flight_) {
            cv_.wait(lock);
            continue;
        }
        if (per_window_ > 0 && starts_.size() >= per_window_) {
            cv_.wait_until(lock, starts_.front() + window_);
            continue;
        }
        ++in_flight_;
        peak_ = std::max(peak_, in_flight_);
        if (per_window_ > 0) starts_.push_back(now);
        return Permit(this);
    }
}

void RateLimiter::release() {
    {
        std::lock_guard lock(mutex_);
        --in_flight_;
    }
    cv_.notify_all();
}

std::size_t RateLimiter::peak_in_flight() const {
    std::lock_guard lock(mutex_);
    return peak_;
}

bool retryable_status(int status) { return status == 0 || status == 429 || status >= 500; }

HttpReply BackendContext::send(const std::string& path, const std::string& body) const {
    const int attempts = std::max(1, retry.attempts);
    auto backoff = retry.initial_backoff;
    HttpReply reply;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        {
            auto permit = limiter->acquire();
            reply = transport->post(path, body);
        }
        if (reply.status >= 200 && reply.status < 300) return reply;
        if (!retryable_status(reply.status)) {
            throw ProviderError(fmt::format("{}: HTTP {} from {}: {}", id, reply.status, path, excerpt(reply.body)),
                                reply.status);
        }
        if (attempt < attempts) {
            if (retry.sleep) {
                retry.sleep(backoff);
            } else {
                std::this_thread::sleep_for(backoff);
            }
            backoff *= 2;
        }
    }
    throw ProviderError(fmt::format("{}: giving up after {} attempts; last status {}: {}", id, attempts, reply.status,
                                    excerpt(reply.body)),
                        reply.status);
}

// ------------------------------------------------------------------ chat

namespace {

json response_to_json(const ChatResponse& r) {
    json out = {{"text", r.text}, {"finish_reason", to_string(r.finish_reason)}};
    if (r.usage) out["usage"] = {{"prompt_tokens", r.usage->prompt_tokens}, {"completion_tokens", r.usage->completion_tokens}};
    return out;
}

ChatResponse response_from_json(const json& j) {
    ChatResponse r;
    r.text = j.at("text").get<std::string>();
    r.finish_reason = parse_finish(j.at("finish_reason").get<std::string>());
    if (j.contains("usage")) {
        r.usage = Usage{j["usage"].value("prompt_tokens", 0), j["usage"].value("completion_tokens", 0)};
    }
    return r;
}

void annotate(ChatResponse& r, int max_tokens) {
    if (r.finish_reason == FinishReason::length) {
        r.warnings.push_back(fmt::format("completion truncated at max_tokens={}", max_tokens));
    }
}

}  // namespace

ChatClient::ChatClient(BackendContext context) : context_(std::move(context)) {
    if (!context_.transport) throw ConfigError("chat backend needs a transport");
    if (!context_.cache) context_.cache = std::make_shared<ResponseCache>();
    if (!context_.limiter) context_.limiter = std::make_shared<RateLimiter>();
}

ChatResponse ChatClient::complete(const ChatRequest& request) const {
    const std::string key = cache_key(context_.id, canonical_bytes(request));
    if (auto hit = context_.cache->get(key)) {
        auto r = response_from_json(hit->at("response"));
        r.from_cache = true;
        annotate(r, request.max_tokens);
        return r;
    }

    const auto reply = context_.send("/chat/completions", to_json(request).dump());
    ChatResponse r;
    try {
        const auto body = json::parse(reply.body);
        const auto& choice = body.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        if (!content.is_string()) throw std::runtime_error("content is not text");
        r.text = content.get<std::string>();
        if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
            r.finish_reason = parse_finish(choice["finish_reason"].get<std::string>());
        }
        if (body.contains("usage") && body["usage"].is_object()) {
            r.usage = Usage{body["usage"].value("prompt_tokens", 0), body["usage"].value("completion_tokens", 0)};
        }
    } catch (const std::exception& e) {
        throw ProviderError(fmt::format("{}: malformed chat response ({}): {}", context_.id, e.what(), excerpt(reply.body)),
                            reply.status);
    }
    context_.cache->put(key, {{"backend", context_.id},
                              {"request", to_json(request)},
                              {"response", response_to_json(r)},
                              {"created_at", now_iso8601()}});
    annotate(r, request.max_tokens);
    return r;
}

// ------------------------------------------------------------------ embeddings

FileEmbeddingProvider::FileEmbeddingProvider(const std::filesystem::path& path) : id_("file:" + path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open embedding file " + path.string());
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        try {
            const auto obj = json::parse(line);
            insert(obj.at("text_sha256").get<std::string>(), obj.at("vector").get<std::vector<double>>());
        } catch (const json::exception& e) {
            throw ValidationError(fmt::format("{}: row {}: {}", path.string(), row, e.what()));
        }
    }
}

FileEmbeddingProvider::FileEmbeddingProvider(std::string id, const std::map<std::string, std::vector<double>>& table)
    : id_(std::move(id)) {
    for (const auto& [text, values] : table) insert(sha256_hex(text), values);
}

void FileEmbeddingProvider::insert(const std::string& hash, const std::vector<double>& values) {
    if (values.empty()) throw IntegrityError("empty embedding for " + hash);
    const auto dim = static_cast<Eigen::Index>(values.size());
    if (dimension_ == 0) dimension_ = dim;
    if (dim != dimension_) {
        throw IntegrityError(fmt::format("embedding for {} has dimension {}, provider has {}", hash, dim, dimension_));
    }
    table_[hash] = Eigen::Map<const Eigen::VectorXd>(values.data(), dim);
}

bool FileEmbeddingProvider::contains(std::string_view text) const { return table_.count(sha256_hex(text)) > 0; }

EmbeddingVector FileEmbeddingProvider::embed(std::string_view text) const {
    if (trim(text).empty()) throw ValidationError("cannot embed empty text");
    const auto hash = sha256_hex(text);
    auto it = table_.find(hash);
    if (it == table_.end()) throw LookupError(fmt::format("{}: no embedding for text_sha256 {}", id_, hash));
    return {it->second, id_};
}

HttpEmbeddingProvider::HttpEmbeddingProvider(BackendContext context, std::string model, Eigen::Index dimension)
    : context_(std::move(context)), model_(std::move(model)), dimension_(dimension) {
    if (!context_.transport) throw ConfigError("embedding backend needs a transport");
    if (!context_.cache) context_.cache = std::make_shared<ResponseCache>();
    if (!context_.limiter) context_.limiter = std::make_shared<RateLimiter>();
    if (dimension_ <= 0) throw ConfigError("embedding dimension must be positive");
}

EmbeddingVector HttpEmbeddingProvider::embed(std::string_view text) const {
    if (trim(text).empty()) throw ValidationError("cannot embed empty text");
    const json request = {{"model", model_}, {"input", std::string(text)}};
    const std::string canonical = request.dump();
    const std::string key = cache_key(context_.id, canonical);

    std::vector<double> values;
    auto hit = context_.cache->get(key);
    if (hit) {
        values = hit->at("vector").get<std::vector<double>>();
    } else {
        const auto reply = context_.send("/embeddings", canonical);
        try {
            values = json::parse(reply.body).at("data").at(0).at("embedding").get<std::vector<double>>();
        } catch (const std::exception& e) {
            throw ProviderError(fmt::format("{}: malformed embedding response ({})", context_.id, e.what()), reply.status);
        }
    }
    if (static_cast<Eigen::Index>(values.size()) != dimension_) {
        throw IntegrityError(fmt::format("{}: embedding has {} values, declared dimension is {}", context_.id,
                                         values.size(), dimension_));
    }
    if (!hit) {
        context_.cache->put(key, {{"backend", context_.id}, {"request", request}, {"vector", values},
                                  {"created_at", now_iso8601()}});
    }
    return {Eigen::Map<const Eigen::VectorXd>(values.data(), dimension_), context_.id};
}

}  // namespace sage
