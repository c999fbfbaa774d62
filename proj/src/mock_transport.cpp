#include <fstream>

#include <fmt/format.h>

#include "sage/error.hpp"
#include "sage/providers.hpp"
#include "sage/text.hpp"

namespace sage {

using nlohmann::json;

std::vector<MockRule> load_mock_rules(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open mock ruleset " + path.string());
    std::vector<MockRule> rules;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        try {
            const auto obj = json::parse(line);
            MockRule rule;
            rule.match = obj.at("match").get<std::string>();
            rule.reply = obj.at("reply").get<std::string>();
            rule.status = obj.value("status", 200);
            rule.finish_reason = obj.value("finish_reason", "stop");
            rules.push_back(std::move(rule));
        } catch (const json::exception& e) {
            throw ConfigError(fmt::format("{}: row {}: {}", path.string(), row, e.what()));
        }
    }
    return rules;
}

std::shared_ptr<MockTransport> MockTransport::with_rules(std::vector<MockRule> rules) {
    std::shared_ptr<MockTransport> t(new MockTransport());
    t->rules_ = std::move(rules);
    return t;
}

std::shared_ptr<MockTransport> MockTransport::echo_benchmark(std::vector<EchoEntry> entries) {
    std::shared_ptr<MockTransport> t(new MockTransport());
    t->echo_ = std::move(entries);
    t->echo_mode_ = true;
    return t;
}

void MockTransport::fail_next(std::vector<int> statuses) {
    std::lock_guard lock(mutex_);
    failures_.insert(failures_.end(), statuses.begin(), statuses.end());
}

std::vector<std::string> MockTransport::received() const {
    std::lock_guard lock(mutex_);
    return received_;
}

namespace {

std::size_t word_count(std::string_view s) {
    std::size_t n = 0;
    bool in_word = false;
    for (unsigned char c : s) {
        const bool space = std::isspace(c);
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

json error_body(const std::string& message) { return {{"error", {{"message", message}, {"type", "mock_error"}}}}; }

}  // namespace

std::string MockTransport::echo_reply(const std::string& prompt, int& status) const {
    const EchoEntry* best = nullptr;
    std::size_t best_pos = 0;
    for (const auto& e : echo_) {
        const auto pos = prompt.rfind(e.student);
        if (pos == std::string::npos || prompt.find(e.expert) == std::string::npos) continue;
        if (!best || pos > best_pos || (pos == best_pos && e.student.size() > best->student.size())) {
            best = &e;
            best_pos = pos;
        }
    }
    if (!best) {
        status = 400;
        return "echo-benchmark: no known pair in prompt";
    }
    status = 200;
    if (prompt.find("Lets think step by step") != std::string::npos) {
        return fmt::format("Both texts describe the same line. Thus, these sentences have a [semantic similarity = {}]",
                           best->benchmark);
    }
    if (prompt.find("between 1 to 5") != std::string::npos) return fmt::format("{}", 1.0 + 4.0 * best->benchmark);
    return fmt::format("{}", best->benchmark);
}

HttpReply MockTransport::do_post(const std::string& path, const std::string& body) {
    {
        std::lock_guard lock(mutex_);
        received_.push_back(body);
        if (!failures_.empty()) {
            const int status = failures_.front();
            failures_.pop_front();
            return {status, error_body("injected failure").dump()};
        }
    }
    if (path != "/chat/completions") return {404, error_body("mock serves /chat/completions only").dump()};

    ChatRequest request;
    try {
        request = chat_request_from_json(json::parse(body));
    } catch (const std::exception& e) {
        return {400, error_body(std::string("bad request: ") + e.what()).dump()};
    }
    std::string prompt;
    for (const auto& m : request.messages) prompt += m.content;

    std::string reply;
    std::string finish = "stop";
    int status = 200;
    if (echo_mode_) {
        reply = echo_reply(prompt, status);
    } else {
        const MockRule* rule = nullptr;
        for (const auto& r : rules_) {
            if (prompt.find(r.match) != std::string::npos) {
                rule = &r;
                break;
            }
        }
        if (!rule) {
            status = 400;
            reply = "no mock rule matches the prompt";
        } else {
            status = rule->status;
            reply = rule->reply;
            finish = rule->finish_reason;
        }
    }
    if (status != 200) return {status, error_body(reply).dump()};

    const json response = {
        {"object", "chat.completion"},
        {"model", request.model},
        {"choices", json::array({{{"index", 0},
                                  {"message", {{"role", "assistant"}, {"content", reply}}},
                                  {"finish_reason", finish}}})},
        {"usage", {{"prompt_tokens", word_count(prompt)}, {"completion_tokens", word_count(reply)}}},
    };
    return {200, response.dump()};
}

}  // namespace sage
