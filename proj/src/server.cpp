#include "semwarm/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

#include "json.hpp"

namespace semwarm {

SocketServer::SocketServer(PipelineConfig cfg, ServerOptions opts)
    : pipeline_(std::move(cfg)), opts_(std::move(opts)) {}

SocketServer::~SocketServer() {
    if (running_) stop();
}

void SocketServer::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(opts_.port));
    if (::inet_pton(AF_INET, opts_.host.c_str(), &addr.sin_addr) != 1) {
        throw std::runtime_error("bad listen address: " + opts_.host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        throw std::runtime_error("bind failed on " + opts_.host + ":" +
                                 std::to_string(opts_.port));
    }
    if (::listen(listen_fd_, 16) != 0) {
        ::close(listen_fd_);
        throw std::runtime_error("listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port_ = ntohs(addr.sin_port);

    started_ = std::chrono::steady_clock::now();
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    maintenance_thread_ = std::thread([this] { maintenance_loop(); });
}

void SocketServer::stop() {
    running_ = false;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    {
        std::lock_guard lock(clients_mutex_);
        for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : client_threads_) {
        if (t.joinable()) t.join();
    }
    if (maintenance_thread_.joinable()) maintenance_thread_.join();
    if (!opts_.snapshot_dir.empty()) {
        pipeline_.cache().save_snapshot(opts_.snapshot_dir);
    }
}

void SocketServer::accept_loop() {
    while (running_) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (!running_) break;
            continue;
        }
        std::lock_guard lock(clients_mutex_);
        client_fds_.push_back(fd);
        client_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void SocketServer::maintenance_loop() {
    while (running_) {
        std::this_thread::sleep_for(
            std::chrono::duration<double>(opts_.maintenance_interval_s));
        if (!running_) break;
        pipeline_.run_maintenance();
    }
}

static void send_line(int fd, const std::string& line) {
    std::string out = line + "\n";
    size_t off = 0;
    while (off < out.size()) {
        ssize_t n = ::send(fd, out.data() + off, out.size() - off, MSG_NOSIGNAL);
        if (n <= 0) return;
        off += static_cast<size_t>(n);
    }
}

void SocketServer::serve_connection(int fd) {
    std::string buffer;
    char chunk[4096];
    size_t lineno = 0;
    while (running_) {
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<size_t>(n));

        size_t pos;
        while ((pos = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, pos);
            buffer.erase(0, pos + 1);
            ++lineno;
            if (line.empty()) continue;

            nlohmann::json req_json;
            try {
                req_json = nlohmann::json::parse(line);
            } catch (const std::exception&) {
                nlohmann::json err;
                err["error"] = "parse";
                err["line"] = lineno;
                send_line(fd, err.dump());
                continue;
            }

            try {
                GenerationRequest req;
                req.id = req_json.at("id").get<uint64_t>();
                req.duration_s = req_json.at("duration_s").get<double>();
                req.total_steps = req_json.value("total_steps",
                                                 pipeline_.config().default_total_steps);
                req.prompt_embedding =
                    embedding_from_base64(req_json.at("prompt_embedding").get<std::string>());
                if (req_json.contains("arrival_time_s")) {
                    req.arrival_time_s = req_json.at("arrival_time_s").get<double>();
                } else {
                    req.arrival_time_s = std::chrono::duration<double>(
                                             std::chrono::steady_clock::now() - started_)
                                             .count();
                }

                ServeOutcome o = pipeline_.handle_request(req);
                nlohmann::json resp;
                resp["id"] = o.request_id;
                resp["cache_hit"] = o.cache_hit;
                if (o.entry_id) resp["entry_id"] = *o.entry_id;
                resp["arm_index"] = o.arm_index;
                resp["steps_skipped"] = o.steps_skipped;
                resp["skip_fraction"] = o.skip_fraction;
                resp["quality"] = o.quality;
                resp["nfe_cost_s"] = o.nfe_cost_s;
                resp["similarity"] = o.reference_similarity;
                resp["fallback"] = o.fallback;
                if (o.admitted_entry_id) {
                    resp["payload_entry"] = *o.admitted_entry_id;
                } else {
                    resp["payload_entry"] = nullptr;
                }
                send_line(fd, resp.dump());
            } catch (const std::exception& e) {
                nlohmann::json err;
                err["error"] = "request";
                err["line"] = lineno;
                err["message"] = e.what();
                send_line(fd, err.dump());
            }
        }
    }
    ::close(fd);
}

}  // namespace semwarm
