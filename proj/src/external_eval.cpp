#include "qroar/external_eval.hpp"

#include "qroar/error.hpp"

#include <json.hpp>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

namespace qroar {

namespace protocol {

using nlohmann::json;

WirePlan to_wire(const ScalePlan& plan)
{
    WirePlan wire;
    wire.mode = plan.mode;
    wire.scales.assign(plan.scales.begin(), plan.scales.end());
    wire.bands = plan.partition.bands;
    wire.pairing = plan.pairing;
    return wire;
}

namespace {

json plan_json(const WirePlan& plan)
{
    json bands = json::array();
    for (const BandRange& band : plan.bands)
        bands.push_back({band.begin, band.end});
    return {{"mode", to_string(plan.mode)}, {"scales", plan.scales}, {"bands", bands},
            {"pairing", to_string(plan.pairing)}};
}

WirePlan plan_from_json(const json& j)
{
    WirePlan plan;
    plan.mode = scale_mode_from_string(j.at("mode").get<std::string>());
    plan.scales = j.at("scales").get<std::vector<double>>();
    for (const json& band : j.at("bands")) {
        if (!band.is_array() || band.size() != 2)
            throw ValidationError("band must be a [lo, hi) pair");
        plan.bands.push_back({band[0].get<int>(), band[1].get<int>()});
    }
    plan.pairing = pairing_from_string(j.at("pairing").get<std::string>());
    return plan;
}

struct Encoder {
    json operator()(const Hello& m) const { return {{"type", "hello"}, {"version", m.version}}; }
    json operator()(const EvalRequest& m) const
    {
        return {{"type", "eval"}, {"plan", plan_json(m.plan)}, {"lengths", m.lengths}, {"window", m.window}};
    }
    json operator()(const Ok& m) const
    {
        json ppl = json::object();
        for (const auto& [length, value] : m.ppl)
            ppl[std::to_string(length)] = value;
        return {{"type", "ok"}, {"ppl", ppl}};
    }
    json operator()(const Error& m) const { return {{"type", "error"}, {"message", m.message}}; }
};

} // namespace

std::string serialize(const Message& message)
{
    return std::visit(Encoder{}, message).dump();
}

Message parse(const std::string& line)
{
    try {
        const json j = json::parse(line);
        const std::string type = j.at("type").get<std::string>();
        if (type == "hello")
            return Hello{j.at("version").get<int>()};
        if (type == "eval")
            return EvalRequest{plan_from_json(j.at("plan")), j.at("lengths").get<std::vector<int>>(),
                               j.at("window").get<int>()};
        if (type == "ok") {
            Ok ok;
            for (const auto& [key, value] : j.at("ppl").items()) {
                std::size_t used = 0;
                const int length = std::stoi(key, &used);
                if (used != key.size())
                    throw ValidationError("non-integer length key");
                // null encodes a non-finite value in JSON
                ok.ppl[length] = value.is_null() ? std::nan("") : value.get<double>();
            }
            return ok;
        }
        if (type == "error")
            return Error{j.at("message").get<std::string>()};
        throw ValidationError("unknown message type '" + type + "'");
    } catch (const ProtocolError&) {
        throw;
    } catch (const std::exception& e) {
        throw ProtocolError(std::string("malformed protocol message (") + e.what() + ")", line);
    }
}

} // namespace protocol

ExternalEvaluator::ExternalEvaluator(const std::string& command, ObjectiveSpec spec,
                                     std::chrono::milliseconds timeout)
    : spec_(spec.normalized()), timeout_(timeout)
{
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0)
        throw BackendError(std::string("socketpair failed: ") + std::strerror(errno));

    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(fds[0]);
        ::close(fds[1]);
        throw BackendError(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::dup2(fds[1], STDIN_FILENO);
        ::dup2(fds[1], STDOUT_FILENO);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(fds[1]);
    fd_ = fds[0];
    pid_ = pid;

    try {
        send_line(protocol::serialize(protocol::Hello{}));
        const std::string line = read_line();
        const protocol::Message reply = protocol::parse(line);
        const auto* hello = std::get_if<protocol::Hello>(&reply);
        if (hello == nullptr)
            throw ProtocolError("expected hello from backend", line);
        if (hello->version != protocol::version)
            throw ProtocolError("backend speaks protocol version " + std::to_string(hello->version), line);
    } catch (...) {
        shutdown();
        throw;
    }
}

ExternalEvaluator::~ExternalEvaluator()
{
    shutdown();
}

void ExternalEvaluator::shutdown()
{
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_WR);
        ::close(fd_);
        fd_ = -1;
    }
    if (pid_ > 0) {
        int status = 0;
        for (int attempt = 0; attempt < 200; ++attempt) {
            if (::waitpid(pid_, &status, WNOHANG) != 0) {
                pid_ = -1;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

void ExternalEvaluator::send_line(const std::string& line)
{
    const std::string data = line + "\n";
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw BackendError(std::string("write to backend failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::string ExternalEvaluator::read_line()
{
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (true) {
        if (const auto newline = buffer_.find('\n'); newline != std::string::npos) {
            std::string line = buffer_.substr(0, newline);
            buffer_.erase(0, newline + 1);
            return line;
        }
        const auto remaining =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0)
            throw BackendError("timed out waiting for backend reply");
        pollfd pfd{fd_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 1 << 30)));
        if (ready < 0) {
            if (errno == EINTR)
                continue;
            throw BackendError(std::string("poll failed: ") + std::strerror(errno));
        }
        if (ready == 0)
            continue;
        char chunk[4096];
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw BackendError(std::string("read from backend failed: ") + std::strerror(errno));
        }
        if (n == 0)
            throw BackendError("backend closed the connection" +
                               (buffer_.empty() ? std::string() : " after partial line: " + buffer_));
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

Evaluation ExternalEvaluator::evaluate(const ScalePlan& plan)
{
    if (fd_ < 0)
        throw BackendError("backend is not running");
    protocol::EvalRequest request;
    request.plan = protocol::to_wire(plan);
    request.window = spec_.window;
    for (const LengthWeight& lw : spec_.lengths)
        request.lengths.push_back(lw.length);
    send_line(protocol::serialize(request));

    const std::string line = read_line();
    const protocol::Message reply = protocol::parse(line);
    if (const auto* error = std::get_if<protocol::Error>(&reply))
        throw BackendError("backend error: " + error->message);
    const auto* ok = std::get_if<protocol::Ok>(&reply);
    if (ok == nullptr)
        throw ProtocolError("expected ok or error reply", line);

    Evaluation result;
    for (const LengthWeight& lw : spec_.lengths) {
        const auto it = ok->ppl.find(lw.length);
        if (it == ok->ppl.end())
            throw ProtocolError("reply lacks perplexity for length " + std::to_string(lw.length), line);
        if (!std::isfinite(it->second))
            throw BackendError("non-finite perplexity for length " + std::to_string(lw.length));
        result.per_length.emplace_back(lw.length, it->second);
        result.objective += lw.weight * it->second;
    }
    return result;
}

Evaluation external_eval(const ScalePlan& plan, const ObjectiveSpec& spec, const std::string& command)
{
    ExternalEvaluator evaluator(command, spec);
    return evaluator.evaluate(plan);
}

} // namespace qroar
