#include <cstdlib>

#include <httplib.h>

#include "kgsynth/textgen.hpp"

namespace kgsynth {

HttpTransport::HttpTransport(std::string url, std::chrono::seconds timeout)
    : timeout_(timeout) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("endpoint URL needs a scheme: " + url);
  }
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ValidationError("unsupported endpoint scheme: " + scheme);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);

  const char* key = std::getenv(kApiKeyEnv);
  if (!key || !*key) {
    throw ValidationError(std::string("credential missing: set ") + kApiKeyEnv);
  }
  api_key_ = key;
}

HttpResponse HttpTransport::post(const std::string& json_body) {
  // One client per call keeps concurrent workers independent.
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  auto res = client.Post(path_, headers, json_body, "application/json");
  if (!res) {
    throw TransportError("request to " + origin_ + path_ +
                         " failed: " + httplib::to_string(res.error()));
  }
  HttpResponse out;
  out.status = res->status;
  out.body = res->body;
  if (res->has_header("Retry-After")) {
    char* end = nullptr;
    const std::string v = res->get_header_value("Retry-After");
    const double secs = std::strtod(v.c_str(), &end);
    if (end != v.c_str() && secs >= 0) out.retry_after_seconds = secs;
  }
  return out;
}

}  // namespace kgsynth
