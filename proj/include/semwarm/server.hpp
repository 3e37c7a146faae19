#pragma once

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "semwarm/pipeline.hpp"

namespace semwarm {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 0;  // 0 binds an ephemeral port
    std::string snapshot_dir;  // cache snapshot flushed here on shutdown
    double maintenance_interval_s = 0.5;
};

// Newline-delimited JSON request/response over a TCP stream socket. Requests
// follow the trace record schema; responses carry the serving outcome plus a
// payload reference. A malformed line yields an error response on that line
// and the connection stays open.
class SocketServer {
public:
    SocketServer(PipelineConfig cfg, ServerOptions opts);
    ~SocketServer();

    void start();
    void stop();  // graceful: drains connections and flushes the cache snapshot
    int port() const { return bound_port_; }
    Pipeline& pipeline() { return pipeline_; }

private:
    void accept_loop();
    void serve_connection(int fd);
    void maintenance_loop();

    Pipeline pipeline_;
    ServerOptions opts_;
    int listen_fd_ = -1;
    int bound_port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::thread maintenance_thread_;
    std::mutex clients_mutex_;
    std::vector<int> client_fds_;
    std::vector<std::thread> client_threads_;
    std::chrono::steady_clock::time_point started_;
};

}  // namespace semwarm
