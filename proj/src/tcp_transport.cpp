#include "histune/tcp_transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <optional>

#include "histune/error.hpp"

namespace histune::bus {

namespace {

constexpr std::size_t kMaxLine = 16 * 1024 * 1024;

[[noreturn]] void transport_error(const std::string& what) {
    throw Error(ErrorCode::Transport, what + ": " + std::strerror(errno));
}

bool send_all(int fd, std::string_view data) {
    while (!data.empty()) {
        ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

class LineReader {
public:
    explicit LineReader(int fd) : fd_(fd) {}

    /// nullopt on EOF or socket error. Throws Error(ParseError) for an
    /// over-long line.
    std::optional<std::string> read_line() {
        for (;;) {
            if (auto nl = buf_.find('\n', scanned_); nl != std::string::npos) {
                std::string line = buf_.substr(0, nl + 1);
                buf_.erase(0, nl + 1);
                scanned_ = 0;
                return line;
            }
            scanned_ = buf_.size();
            if (buf_.size() > kMaxLine) throw Error(ErrorCode::ParseError, "parse error: line exceeds 16 MiB");
            char chunk[8192];
            ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return std::nullopt;
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_;
    std::string buf_;
    std::size_t scanned_ = 0;
};

int connect_to(const BusAddress& address) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(address.port);
    if (int rc = ::getaddrinfo(address.host.c_str(), port.c_str(), &hints, &res); rc != 0)
        throw Error(ErrorCode::Transport, "cannot resolve " + address.to_string() + ": " + gai_strerror(rc));
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) transport_error("cannot connect to " + address.to_string());
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return fd;
}

std::string handshake_line(const char* op, std::string_view topic) {
    Payload h = Payload::object();
    h["op"] = op;
    h["topic"] = std::string(topic);
    return h.dump() + "\n";
}

std::string error_line(const Error& e) {
    Payload r = Payload::object();
    r["error"] = e.what();
    r["code"] = error_code_name(e.code());
    return r.dump() + "\n";
}

ErrorCode code_from_name(const std::string& name) {
    for (auto c : {ErrorCode::BusClosed, ErrorCode::SchemaViolation, ErrorCode::ParseError})
        if (name == error_code_name(c)) return c;
    return ErrorCode::Transport;
}

/// Parses a server reply line; throws the carried error.
Payload expect_reply(std::optional<std::string> line, const char* context) {
    if (!line) throw Error(ErrorCode::BusClosed, std::string("bus closed: connection lost during ") + context);
    Payload r;
    try {
        r = Payload::parse(*line);
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::Transport, std::string("malformed reply during ") + context);
    }
    if (r.is_object() && r.contains("error")) {
        auto code = r.contains("code") && r["code"].is_string() ? code_from_name(r["code"].get<std::string>())
                                                                 : ErrorCode::Transport;
        throw Error(code, r["error"].is_string() ? r["error"].get<std::string>() : "remote error");
    }
    if (!r.is_object()) throw Error(ErrorCode::Transport, std::string("malformed reply during ") + context);
    return r;
}

/// Client-side subscription: a reader thread decodes lines into a local
/// bounded queue, so a slow consumer pushes back on the socket.
class TcpStream : public MessageStream {
public:
    TcpStream(int fd, LineReader reader)
        : fd_(fd), queue_(std::make_shared<SubscriberQueue>(65536)) {
        reader_ = std::thread([this, r = std::move(reader)]() mutable { run(std::move(r)); });
    }

    ~TcpStream() override {
        cancel();
        queue_->detach();
        if (reader_.joinable()) reader_.join();
        ::close(fd_);
    }

    std::optional<Envelope> next() override { return queue_->pop(std::nullopt); }
    std::optional<Envelope> next_for(std::chrono::milliseconds t) override { return queue_->pop(t); }
    std::optional<Envelope> poll() override { return queue_->try_pop(); }
    bool ended() const override { return queue_->drained_and_closed(); }
    void cancel() override {
        ::shutdown(fd_, SHUT_RDWR);
        queue_->close();
    }

private:
    void run(LineReader reader) {
        try {
            while (auto line = reader.read_line()) {
                if (!queue_->push(decode(*line))) break;
            }
        } catch (const Error&) {
            // A malformed frame from the server ends the stream.
        }
        queue_->close();
    }

    int fd_;
    std::shared_ptr<SubscriberQueue> queue_;
    std::thread reader_;
};

}  // namespace

BusAddress parse_bus_address(const std::string& text) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size())
        throw Error(ErrorCode::Config, "bus address must be host:port, got '" + text + "'");
    BusAddress a;
    a.host = text.substr(0, colon);
    char* end = nullptr;
    const std::string port = text.substr(colon + 1);
    long p = std::strtol(port.c_str(), &end, 10);
    if (*end != '\0' || p < 0 || p > 65535) throw Error(ErrorCode::Config, "invalid port in '" + text + "'");
    a.port = static_cast<std::uint16_t>(p);
    return a;
}

BusAddress default_bus_address() {
    if (const char* env = std::getenv("HISTUNE_BUS_ADDR"); env && *env) return parse_bus_address(env);
    return {};
}

// ---------------------------------------------------------------- server

struct TcpBusServer::Connection {
    int fd = -1;
    std::mutex mu;
    MessageStream* stream = nullptr;

    void interrupt() {
        std::lock_guard lock(mu);
        ::shutdown(fd, SHUT_RDWR);
        if (stream) stream->cancel();
    }
};

TcpBusServer::TcpBusServer(Broker& broker, BusAddress address) : broker_(broker), address_(std::move(address)) {}

TcpBusServer::~TcpBusServer() { stop(); }

void TcpBusServer::start() {
    if (running_) return;
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(address_.port);
    if (int rc = ::getaddrinfo(address_.host.c_str(), port.c_str(), &hints, &res); rc != 0)
        throw Error(ErrorCode::Transport, "cannot resolve " + address_.to_string() + ": " + gai_strerror(rc));

    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(res);
        transport_error("socket");
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 64) != 0) {
        int saved = errno;
        ::freeaddrinfo(res);
        ::close(fd);
        errno = saved;
        transport_error("cannot listen on " + address_.to_string());
    }
    ::freeaddrinfo(res);

    sockaddr_storage bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    bound_port_ = bound.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                              : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
    listen_fd_ = fd;
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpBusServer::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();

    std::list<std::thread> workers;
    {
        std::lock_guard lock(mu_);
        for (auto& c : connections_) c->interrupt();
        workers.swap(workers_);
    }
    for (auto& w : workers)
        if (w.joinable()) w.join();
    std::lock_guard lock(mu_);
    connections_.clear();
}

void TcpBusServer::accept_loop() {
    while (running_) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            break;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        auto conn = std::make_shared<Connection>();
        conn->fd = fd;
        std::lock_guard lock(mu_);
        if (!running_) {
            ::close(fd);
            break;
        }
        connections_.push_back(conn);
        workers_.emplace_back([this, conn] { serve(conn); });
    }
}

void TcpBusServer::serve(std::shared_ptr<Connection> conn) {
    LineReader reader(conn->fd);
    try {
        auto first = reader.read_line();
        if (!first) throw Error(ErrorCode::ParseError, "parse error: connection closed before handshake");
        Payload hs;
        try {
            hs = Payload::parse(*first);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorCode::ParseError, "parse error at byte " + std::to_string(e.byte) + ": bad handshake");
        }
        if (!hs.is_object() || !hs.contains("op") || !hs.contains("topic") || !hs["op"].is_string() ||
            !hs["topic"].is_string())
            throw Error(ErrorCode::ParseError, "parse error: handshake needs string 'op' and 'topic'");
        const std::string op = hs["op"].get<std::string>();
        const std::string topic = hs["topic"].get<std::string>();
        validate_topic(topic);

        if (op == "sub") {
            auto stream = broker_.subscribe(topic);
            {
                std::lock_guard lock(conn->mu);
                conn->stream = stream.get();
            }
            if (running_ && send_all(conn->fd, "{\"ok\":true}\n")) {
                while (auto env = stream->next())
                    if (!send_all(conn->fd, encode(*env))) break;
            }
            std::lock_guard lock(conn->mu);
            conn->stream = nullptr;
        } else if (op == "pub") {
            if (!send_all(conn->fd, "{\"ok\":true}\n")) throw Error(ErrorCode::Transport, "client went away");
            while (auto line = reader.read_line()) {
                std::string reply;
                try {
                    Envelope env = decode(*line);
                    if (env.topic != topic)
                        throw Error(ErrorCode::SchemaViolation,
                                    "schema violation: envelope topic '" + env.topic + "' on a '" + topic + "' channel");
                    const auto seq = broker_.publish(topic, std::move(env.payload));
                    reply = "{\"ack\":" + std::to_string(seq) + "}\n";
                } catch (const Error& e) {
                    reply = error_line(e);
                }
                if (!send_all(conn->fd, reply)) break;
            }
        } else {
            throw Error(ErrorCode::ParseError, "parse error: unknown op '" + op + "'");
        }
    } catch (const Error& e) {
        send_all(conn->fd, error_line(e));
    }
    ::shutdown(conn->fd, SHUT_RDWR);
    std::lock_guard lock(mu_);
    ::close(conn->fd);
    conn->fd = -1;
}

// ---------------------------------------------------------------- client

struct TcpBusClient::PubChannel {
    int fd;
    LineReader reader;
    std::mutex mu;

    explicit PubChannel(int f) : fd(f), reader(f) {}
    ~PubChannel() { ::close(fd); }
};

TcpBusClient::TcpBusClient(BusAddress address) : address_(std::move(address)) {}

TcpBusClient::~TcpBusClient() { close(); }

std::uint64_t TcpBusClient::publish(std::string_view topic, Payload payload) {
    validate_payload(topic, payload);
    std::shared_ptr<PubChannel> ch;
    {
        std::lock_guard lock(mu_);
        if (closed_) throw Error(ErrorCode::BusClosed, "bus closed");
        auto it = publishers_.find(topic);
        if (it == publishers_.end()) {
            int fd = connect_to(address_);
            auto fresh = std::make_shared<PubChannel>(fd);
            if (!send_all(fd, handshake_line("pub", topic)))
                throw Error(ErrorCode::BusClosed, "bus closed: handshake failed");
            expect_reply(fresh->reader.read_line(), "handshake");
            it = publishers_.emplace(std::string(topic), std::move(fresh)).first;
        }
        ch = it->second;
    }

    std::lock_guard lock(ch->mu);
    const std::string line = encode(Envelope{std::string(topic), 0, system_clock_ms(), std::move(payload)});
    if (!send_all(ch->fd, line)) throw Error(ErrorCode::BusClosed, "bus closed: connection lost");
    Payload r = expect_reply(ch->reader.read_line(), "publish");
    if (!r.contains("ack") || !r["ack"].is_number_unsigned())
        throw Error(ErrorCode::Transport, "publish reply carries no ack");
    return r["ack"].get<std::uint64_t>();
}

std::unique_ptr<MessageStream> TcpBusClient::subscribe(std::string_view topic) {
    validate_topic(topic);
    {
        std::lock_guard lock(mu_);
        if (closed_) throw Error(ErrorCode::BusClosed, "bus closed");
    }
    int fd = connect_to(address_);
    LineReader reader(fd);
    try {
        if (!send_all(fd, handshake_line("sub", topic))) throw Error(ErrorCode::BusClosed, "bus closed: handshake failed");
        expect_reply(reader.read_line(), "handshake");
    } catch (...) {
        ::close(fd);
        throw;
    }
    return std::make_unique<TcpStream>(fd, std::move(reader));
}

void TcpBusClient::close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    publishers_.clear();
}

bool TcpBusClient::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

}  // namespace histune::bus
