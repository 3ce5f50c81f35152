#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace kverb::testing {

/// Scripted reply for one query on one route.
struct MockReply {
  std::string body = "[]";
  /// Status codes served on successive hits; the last one repeats. 200 serves `body`.
  std::vector<int> statuses{200};
  /// Delay applied to each hit whose index is below `delayed_hits`.
  std::chrono::milliseconds delay{0};
  int delayed_hits = 0;
};

/// Local HTTP stand-in for both knowledge bases, bound to 127.0.0.1 on a
/// free port. Routes are "/rw" and "/rd", queried with `?query=`.
class MockKBServer {
 public:
  MockKBServer();
  ~MockKBServer();
  MockKBServer(const MockKBServer&) = delete;
  MockKBServer& operator=(const MockKBServer&) = delete;

  void set(const std::string& route, const std::string& query, MockReply reply);
  int hits(const std::string& route, const std::string& query) const;
  int total_hits() const;
  /// Peak number of requests being served at the same time.
  int peak_concurrency() const;
  std::vector<std::chrono::steady_clock::time_point> arrivals() const;

  std::string url(const std::string& route) const;
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace kverb::testing
