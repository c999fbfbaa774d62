// Eigen (via providers.hpp) must come before httplib, whose system headers
// leave macros behind that break Eigen's product kernels.
#include "sage/error.hpp"
#include "sage/providers.hpp"

#include <fmt/format.h>

#include <httplib.h>

namespace sage {

HttpTransport::HttpTransport(std::string base_url, std::string api_key, std::chrono::seconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + base_url);
    const auto path_start = base_url.find('/', scheme_end + 3);
    origin_ = base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

HttpReply HttpTransport::do_post(const std::string& path, const std::string& body) {
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto result = client.Post(prefix_ + path, headers, body, "application/json");
    if (!result) return {0, fmt::format("transport error: {}", httplib::to_string(result.error()))};
    return {result->status, result->body};
}

}  // namespace sage
