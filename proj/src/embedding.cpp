#include "spontts/embedding.hpp"

#include <cstring>
#include <random>

#include <httplib.h>
#include <json.hpp>

#include "spontts/util.hpp"

namespace spontts::embedding {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<float> HashProvider::embed_text(const std::string& text) {
  std::uint64_t key = fnv1a64(id() + '\0' + text);
  std::mt19937_64 g(key);
  std::vector<float> v(kDim);
  for (int i = 0; i < kDim; ++i)
    v[i] = static_cast<float>(2.0 * rng_uniform(g) - 1.0);
  return v;
}

std::string HttpProvider::id() const {
  return "http-" + cfg_.host + ":" + std::to_string(cfg_.port) + cfg_.path;
}

std::vector<float> HttpProvider::embed_text(const std::string& text) {
  httplib::Client client(cfg_.host, cfg_.port);
  auto sec = static_cast<time_t>(cfg_.timeout_s);
  auto usec = static_cast<time_t>((cfg_.timeout_s - sec) * 1e6);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);

  json req{{"text", text}};
  std::string err;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    auto res = client.Post(cfg_.path, req.dump(), "application/json");
    if (!res) {
      err = "connection failed";
      continue;
    }
    if (res->status != 200) {
      err = "http status " + std::to_string(res->status);
      continue;
    }
    json body;
    try {
      body = json::parse(res->body);
    } catch (const json::exception& e) {
      err = std::string("bad response body: ") + e.what();
      continue;
    }
    auto v = body.at("embedding").get<std::vector<float>>();
    if (static_cast<int>(v.size()) != kDim)
      throw RuntimeFailure("embedding service returned dimension " +
                           std::to_string(v.size()) + ", expected " +
                           std::to_string(kDim));
    return v;
  }
  throw RuntimeFailure("embedding service unavailable after " +
                       std::to_string(cfg_.retries + 1) + " attempts: " + err);
}

Service::Service(std::shared_ptr<Provider> provider,
                 std::optional<fs::path> cache_dir)
    : provider_(std::move(provider)),
      provider_id_(provider_->id()),
      cache_dir_(std::move(cache_dir)) {
  if (cache_dir_) fs::create_directories(*cache_dir_);
}

namespace {

std::string pack_floats(const std::vector<float>& v) {
  std::string out;
  out.reserve(v.size() * 4);
  for (float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i)
      out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

std::vector<float> unpack_floats(const std::string& raw) {
  std::vector<float> v(raw.size() / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t bits = p[4 * i] | (p[4 * i + 1] << 8) | (p[4 * i + 2] << 16) |
                         (std::uint32_t(p[4 * i + 3]) << 24);
    std::memcpy(&v[i], &bits, 4);
  }
  return v;
}

}  // namespace

Eigen::VectorXd Service::embed_text(const std::string& text) {
  std::vector<float>* cached = nullptr;
  auto it = memory_.find(text);
  if (it != memory_.end()) {
    cached = &it->second;
  } else if (cache_dir_) {
    fs::path f = *cache_dir_ / (to_hex(fnv1a64(provider_id_ + '\0' + text)) + ".emb");
    if (fs::exists(f)) {
      auto v = unpack_floats(read_text_file(f));
      if (static_cast<int>(v.size()) == kDim)
        cached = &memory_.emplace(text, std::move(v)).first->second;
    }
  }
  if (!cached) {
    auto v = provider_->embed_text(text);
    if (static_cast<int>(v.size()) != kDim)
      throw RuntimeFailure("provider " + provider_id_ + " returned dimension " +
                           std::to_string(v.size()));
    if (cache_dir_) {
      fs::path f =
          *cache_dir_ / (to_hex(fnv1a64(provider_id_ + '\0' + text)) + ".emb");
      write_file_atomic(f, pack_floats(v));
    }
    cached = &memory_.emplace(text, std::move(v)).first->second;
  }
  Eigen::VectorXd out(kDim);
  for (int i = 0; i < kDim; ++i) out(i) = (*cached)[i];
  return out;
}

Eigen::VectorXd Service::embed(const corpus::Utterance* u) {
  if (u == nullptr) return Eigen::VectorXd::Zero(kDim);
  return embed_text(utterance_text(*u));
}

std::string utterance_text(const corpus::Utterance& u) {
  std::string text;
  for (const auto& c : u.chars) text += c;
  return text;
}

}  // namespace embedding
