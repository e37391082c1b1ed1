#include "opennas/trainer_client.hpp"

#include <cerrno>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "opennas/errors.hpp"
#include "opennas/serialize.hpp"

extern char** environ;

namespace opennas {

namespace protocol {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json encode_request(std::int64_t id, const EvalRequest& request) {
    ordered_json msg;
    msg["id"] = id;
    msg["op"] = "evaluate";
    msg["architecture"] = to_json(request.architecture);
    msg["epochs"] = request.epochs;
    msg["dataset"] = request.dataset_ref;
    msg["subset_size"] = request.subset_size ? ordered_json(*request.subset_size) : ordered_json(nullptr);
    msg["seed"] = request.seed;
    return msg;
}

namespace {

const json& field(const json& msg, const char* name) {
    if (!msg.is_object() || !msg.contains(name)) throw SchemaError(fmt::format("message: missing field \"{}\"", name));
    return msg[name];
}

double number(const json& msg, const char* name) {
    const json& v = field(msg, name);
    if (!v.is_number()) throw SchemaError(fmt::format("message: field \"{}\" must be a number", name));
    return v.get<double>();
}

std::int64_t integer(const json& msg, const char* name) {
    const json& v = field(msg, name);
    if (!v.is_number_integer()) throw SchemaError(fmt::format("message: field \"{}\" must be an integer", name));
    return v.get<std::int64_t>();
}

} // namespace

EvalRequest decode_request(const json& message, std::int64_t& id) {
    id = integer(message, "id");
    if (field(message, "op") != "evaluate") throw SchemaError("message: op must be \"evaluate\"");
    EvalRequest req;
    req.architecture = architecture_from_json(field(message, "architecture"));
    req.epochs = static_cast<int>(integer(message, "epochs"));
    const json& dataset = field(message, "dataset");
    if (!dataset.is_string()) throw SchemaError("message: field \"dataset\" must be a string");
    req.dataset_ref = dataset.get<std::string>();
    if (message.contains("subset_size") && !message["subset_size"].is_null()) {
        req.subset_size = integer(message, "subset_size");
    }
    const json& seed = field(message, "seed");
    if (!seed.is_number_unsigned() && !seed.is_number_integer()) throw SchemaError("message: seed must be an integer");
    req.seed = seed.get<std::uint64_t>();
    return req;
}

ordered_json encode_response(std::int64_t id, const FitnessReport& report) {
    ordered_json msg;
    msg["id"] = id;
    msg["ok"] = true;
    msg["val_accuracy"] = report.val_accuracy;
    msg["val_loss"] = report.val_loss;
    msg["wall_seconds"] = report.wall_seconds;
    msg["param_count"] = report.param_count;
    return msg;
}

ordered_json encode_error(std::int64_t id, const std::string& message) {
    ordered_json msg;
    msg["id"] = id;
    msg["ok"] = false;
    msg["error"] = message;
    return msg;
}

Response decode_response(const json& message) {
    Response r;
    r.id = integer(message, "id");
    const json& ok = field(message, "ok");
    if (!ok.is_boolean()) throw SchemaError("message: field \"ok\" must be a boolean");
    r.ok = ok.get<bool>();
    if (!r.ok) {
        const json& err = field(message, "error");
        r.error = err.is_string() ? err.get<std::string>() : err.dump();
        return r;
    }
    r.report.val_accuracy = number(message, "val_accuracy");
    r.report.val_loss = number(message, "val_loss");
    r.report.wall_seconds = number(message, "wall_seconds");
    r.report.param_count = integer(message, "param_count");
    if (!(r.report.val_accuracy >= 0.0 && r.report.val_accuracy <= 1.0))
        throw SchemaError("message: val_accuracy outside [0, 1]");
    if (!(r.report.val_loss >= 0.0) || !std::isfinite(r.report.val_loss))
        throw SchemaError("message: val_loss must be finite and non-negative");
    return r;
}

} // namespace protocol

namespace {

constexpr std::size_t kStderrTail = 4096;

void ignore_sigpipe() {
    // A backend that dies mid-request must surface as a failed write, not
    // terminate the engine.
    static std::once_flag once;
    std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

} // namespace

struct ExternTrainer::Impl {
    std::string command;
    Seconds timeout;

    pid_t pid = -1;
    int to_child = -1;
    int from_child = -1;
    int err_child = -1;

    std::mutex mu;
    std::condition_variable cv;
    std::mutex write_mu;

    bool hello_received = false;
    nlohmann::json hello;
    bool dead = false;
    std::string death_reason;
    std::set<std::int64_t> pending;
    std::map<std::int64_t, protocol::Response> done;
    std::int64_t next_id = 1;
    std::string stderr_tail;
    std::string stdout_noise;

    std::thread reader;
    std::thread err_reader;
    bool spawned = false;
    bool reaped = false;

    ~Impl() { shutdown(); }

    void spawn();
    void shutdown();
    void read_stdout();
    void read_stderr();
    void handle_line(const std::string& line);
    void kill_locked(const std::string& reason);
    [[noreturn]] void fail_locked(const std::string& what);
};

void ExternTrainer::Impl::spawn() {
    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) {
        throw EvaluatorFailure(fmt::format("cannot create pipes: {}", std::strerror(errno)));
    }

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);

    std::string sh = "/bin/sh", dash_c = "-c";
    char* argv[] = {sh.data(), dash_c.data(), command.data(), nullptr};
    const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, &attr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);

    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    to_child = in_pipe[1];
    from_child = out_pipe[0];
    err_child = err_pipe[0];
    if (rc != 0) {
        ::close(to_child);
        ::close(from_child);
        ::close(err_child);
        throw EvaluatorFailure(fmt::format("cannot spawn trainer \"{}\": {}", command, std::strerror(rc)));
    }

    spawned = true;
    // The stdout reader joins the stderr drain, so start the drain first.
    err_reader = std::thread([this] { read_stderr(); });
    reader = std::thread([this] { read_stdout(); });
}

void ExternTrainer::Impl::shutdown() {
    if (!spawned) return;
    spawned = false;
    ::close(to_child);
    {
        std::unique_lock lock(mu);
        if (!cv.wait_for(lock, std::chrono::seconds(2), [&] { return dead && reaped; })) {
            if (!reaped) ::kill(-pid, SIGKILL);
        }
    }
    if (reader.joinable()) reader.join();
    ::close(from_child);
    ::close(err_child);
}

void ExternTrainer::Impl::read_stderr() {
    char buf[4096];
    for (;;) {
        const ssize_t n = ::read(err_child, buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        std::lock_guard lock(mu);
        stderr_tail.append(buf, static_cast<std::size_t>(n));
        if (stderr_tail.size() > kStderrTail) stderr_tail.erase(0, stderr_tail.size() - kStderrTail);
    }
}

void ExternTrainer::Impl::handle_line(const std::string& line) {
    nlohmann::json msg = nlohmann::json::parse(line, nullptr, false);
    std::lock_guard lock(mu);
    if (msg.is_discarded() || !msg.is_object()) {
        stdout_noise = line.substr(0, 512);
        return;
    }
    if (!hello_received && msg.value("op", "") == "hello") {
        hello = std::move(msg);
        hello_received = true;
        cv.notify_all();
        return;
    }
    if (!msg.contains("id") || !msg["id"].is_number_integer()) {
        stdout_noise = line.substr(0, 512);
        return;
    }
    const auto id = msg["id"].get<std::int64_t>();
    if (!pending.contains(id)) return;
    try {
        done[id] = protocol::decode_response(msg);
    } catch (const SchemaError& e) {
        protocol::Response bad;
        bad.id = id;
        bad.error = fmt::format("malformed response: {}", e.what());
        done[id] = bad;
    }
    cv.notify_all();
}

void ExternTrainer::Impl::read_stdout() {
    std::string buffer;
    char chunk[8192];
    for (;;) {
        const ssize_t n = ::read(from_child, chunk, sizeof chunk);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (std::size_t nl = buffer.find('\n', start); nl != std::string::npos; nl = buffer.find('\n', start)) {
            if (nl > start) handle_line(buffer.substr(start, nl - start));
            start = nl + 1;
        }
        buffer.erase(0, start);
    }

    int status = 0;
    pid_t waited;
    do {
        waited = ::waitpid(pid, &status, 0);
    } while (waited < 0 && errno == EINTR);

    std::string why;
    if (waited == pid && WIFEXITED(status)) {
        why = fmt::format("trainer process exited with status {}", WEXITSTATUS(status));
    } else if (waited == pid && WIFSIGNALED(status)) {
        why = fmt::format("trainer process killed by signal {}", WTERMSIG(status));
    } else {
        why = "trainer process closed its output";
    }
    // Let the stderr drain catch up so diagnostics are complete.
    if (err_reader.joinable()) err_reader.join();

    std::lock_guard lock(mu);
    reaped = true;
    if (!dead) {
        dead = true;
        death_reason = why;
    }
    cv.notify_all();
}

void ExternTrainer::Impl::kill_locked(const std::string& reason) {
    if (!dead) {
        dead = true;
        death_reason = reason;
    }
    if (!reaped) ::kill(-pid, SIGKILL);
    cv.notify_all();
}

void ExternTrainer::Impl::fail_locked(const std::string& what) {
    std::string msg = what;
    if (!stderr_tail.empty()) msg += fmt::format("; stderr: {}", stderr_tail);
    if (!stdout_noise.empty()) msg += fmt::format("; last non-protocol output: {}", stdout_noise);
    throw EvaluatorFailure(msg);
}

ExternTrainer::ExternTrainer(std::string command, Seconds timeout) : impl_(std::make_unique<Impl>()) {
    ignore_sigpipe();
    impl_->command = std::move(command);
    impl_->timeout = timeout;
    impl_->spawn();

    std::unique_lock lock(impl_->mu);
    const bool ready = impl_->cv.wait_for(lock, timeout, [this] { return impl_->hello_received || impl_->dead; });
    if (impl_->hello_received) return;
    if (!ready) impl_->kill_locked(fmt::format("no hello from trainer within {} s", timeout.count()));
    const std::string reason = impl_->death_reason;
    try {
        impl_->fail_locked(fmt::format("trainer handshake failed: {}", reason));
    } catch (...) {
        lock.unlock();
        impl_.reset();
        throw;
    }
}

ExternTrainer::~ExternTrainer() = default;

ExternTrainer::Seconds ExternTrainer::timeout_from_env() {
    if (const char* raw = std::getenv("OPENNAS_TRAINER_TIMEOUT_S")) {
        char* end = nullptr;
        const double v = std::strtod(raw, &end);
        if (end != raw && *end == '\0' && v > 0.0) return Seconds(v);
        throw ConfigError(fmt::format("OPENNAS_TRAINER_TIMEOUT_S must be a positive number, got \"{}\"", raw));
    }
    return Seconds(3600.0);
}

int ExternTrainer::max_parallelism() const {
    std::lock_guard lock(impl_->mu);
    const auto& h = impl_->hello;
    if (h.contains("max_parallelism") && h["max_parallelism"].is_number_integer()) {
        return std::max(1, h["max_parallelism"].get<int>());
    }
    return 1;
}

const nlohmann::json& ExternTrainer::hello() const {
    return impl_->hello;
}

FitnessReport ExternTrainer::evaluate(const EvalRequest& request) {
    request.check();
    Impl& im = *impl_;
    std::int64_t id = 0;
    {
        std::unique_lock lock(im.mu);
        if (im.dead) im.fail_locked(im.death_reason);
        id = im.next_id++;
        im.pending.insert(id);
    }

    const std::string line = protocol::encode_request(id, request).dump() + "\n";
    bool write_ok = true;
    {
        std::lock_guard wlock(im.write_mu);
        std::size_t off = 0;
        while (off < line.size()) {
            const ssize_t n = ::write(im.to_child, line.data() + off, line.size() - off);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) {
                write_ok = false;
                break;
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::unique_lock lock(im.mu);
    if (!write_ok) {
        // The reader will report the exit status shortly; prefer that message.
        im.cv.wait_for(lock, std::chrono::seconds(2), [&] { return im.dead; });
        im.pending.erase(id);
        im.fail_locked(fmt::format("request {}: cannot write to trainer ({})",
                                   id, im.dead ? im.death_reason : std::string("broken pipe")));
    }
    const bool answered =
        im.cv.wait_for(lock, im.timeout, [&] { return im.done.contains(id) || im.dead; });
    im.pending.erase(id);
    if (auto it = im.done.find(id); it != im.done.end()) {
        protocol::Response r = std::move(it->second);
        im.done.erase(it);
        if (!r.ok) im.fail_locked(fmt::format("request {}: trainer reported failure: {}", id, r.error));
        return r.report;
    }
    if (!answered) {
        im.kill_locked(fmt::format("request {} timed out after {} s", id, im.timeout.count()));
        im.fail_locked(im.death_reason);
    }
    im.fail_locked(fmt::format("request {}: {}", id, im.death_reason));
}

} // namespace opennas
