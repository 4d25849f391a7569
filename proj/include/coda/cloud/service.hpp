#pragma once

#include <httplib.h>

#include <cstdint>
#include <memory>
#include <string>
#include <thread>

#include "coda/cloud/cloud.hpp"
#include "coda/error.hpp"

namespace coda::cloud {

// Thin HTTP facade over a CloudStore, for running the batch store as a
// service. Routes:
//   GET /batch?user=<id>&batch=<id>  -> encoded payload (text/plain)
//   GET /batches?user=<id>           -> newline-separated batch ids
// Error mapping: AuthorizationError -> 403, GoneError -> 410, everything
// else that is missing -> 404, malformed query -> 400.
class CloudService {
 public:
  explicit CloudService(CloudStore& store) : store_(store) {
    server_.Get("/batch", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t user = 0, batch = 0;
      if (!parse_id(req, "user", user) || !parse_id(req, "batch", batch)) {
        res.status = 400;
        res.set_content("bad query", "text/plain");
        return;
      }
      try {
        res.set_content(store_.query_batch(user, batch), "text/plain");
      } catch (const AuthorizationError& e) {
        res.status = 403;
        res.set_content(e.what(), "text/plain");
      } catch (const GoneError& e) {
        res.status = 410;
        res.set_content(e.what(), "text/plain");
      } catch (const NotFoundError& e) {
        res.status = 404;
        res.set_content(e.what(), "text/plain");
      }
    });
    server_.Get("/batches", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t user = 0;
      if (!parse_id(req, "user", user)) {
        res.status = 400;
        res.set_content("bad query", "text/plain");
        return;
      }
      std::string body;
      for (std::uint64_t id : store_.batch_list(user)) {
        body += std::to_string(id);
        body += '\n';
      }
      res.set_content(body, "text/plain");
    });
  }

  ~CloudService() { stop(); }

  // Binds to an ephemeral port on localhost and serves from a background
  // thread. Returns the bound port.
  int start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw TransportError("could not bind service port");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }

 private:
  static bool parse_id(const httplib::Request& req, const char* key,
                       std::uint64_t& out) {
    if (!req.has_param(key)) return false;
    const std::string v = req.get_param_value(key);
    if (v.empty()) return false;
    try {
      std::size_t pos = 0;
      out = std::stoull(v, &pos);
      return pos == v.size();
    } catch (const std::exception&) {
      return false;
    }
  }

  CloudStore& store_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace coda::cloud
