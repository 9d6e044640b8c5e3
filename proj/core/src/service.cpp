#include "corde/service.hpp"

#include <algorithm>
#include <condition_variable>
#include <filesystem>
#include <future>
#include <deque>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "corde/protocol.hpp"
#include "corde/session.hpp"

namespace corde {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

class WsSession;

/// State shared by all connections. Everything except the engine, the session log and
/// the atomics is touched only from the network thread.
struct ServiceCore {
  SceneConfig scene;
  ServiceOptions options;
  std::unique_ptr<Engine> engine;
  std::unique_ptr<SessionWriter> log;
  json hello;
  std::string mesh_text;
  std::string scene_text;

  net::io_context ioc;
  tcp::acceptor acceptor{ioc};

  std::set<std::shared_ptr<WsSession>> sessions;
  std::vector<WsSession*> controllers;
  std::map<std::pair<std::uint32_t, std::uint32_t>, WsSession*> grab_owner;
  bool stopping = false;

  void handle_message(WsSession& s, const std::string& text);
  void handle_command(WsSession& s, const json& msg);
  void post_and_log(const Command& c);
  void on_close(WsSession& s);
  bool is_controller(const WsSession* s) const {
    return std::find(controllers.begin(), controllers.end(), s) != controllers.end();
  }
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, ServiceCore& core)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), core_(core),
        stride_(core.options.stride), frames_(core.options.include_frames) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->core_.sessions.insert(self);
      json hello = self->core_.hello;
      if (auto snap = self->core_.engine->read_snapshot()) hello["scene"]["step_index"] = snap->step_index;
      self->send(hello.dump());
      self->do_read();
      self->schedule_frame();
    });
  }

  void send(std::string text) {
    if (closed_) return;
    queue_.push_back(std::move(text));
    if (!writing_) do_write();
  }

  void send_and_close(std::string text) {
    close_after_write_ = true;
    send(std::move(text));
  }

  void shutdown() {
    if (closed_) return;
    close();
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

  void set_stride(std::size_t s) { stride_ = s; }
  void set_frames(bool f) { frames_ = f; }

 private:
  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->core_.handle_message(*self, text);
      if (!self->closed_) self->do_read();
    });
  }

  void do_write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->queue_.pop_front();
                      if (ec) {
                        self->writing_ = false;
                        self->close();
                        return;
                      }
                      if (!self->queue_.empty()) {
                        self->do_write();
                        return;
                      }
                      self->writing_ = false;
                      if (self->close_after_write_) {
                        self->ws_.async_close(websocket::close_code::policy_error,
                                              [self](beast::error_code) { self->close(); });
                      }
                    });
  }

  void schedule_frame() {
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / core_.options.frame_rate));
    timer_.expires_after(period);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      // Slow clients skip frames instead of growing the queue.
      if (self->queue_.size() < 2) {
        if (auto snap = self->core_.engine->read_snapshot()) {
          if (snap->sequence > self->last_sequence_) {
            self->last_sequence_ = snap->sequence;
            self->send(state_frame_message(*snap, self->stride_, self->frames_).dump());
          }
        }
      }
      self->schedule_frame();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    timer_.cancel();
    core_.on_close(*this);
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  net::steady_timer timer_;
  ServiceCore& core_;
  std::deque<std::string> queue_;
  bool writing_ = false;
  bool closed_ = false;
  bool close_after_write_ = false;
  std::size_t stride_;
  bool frames_;
  std::uint64_t last_sequence_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, ServiceCore& core) : stream_(std::move(socket)), core_(core) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) return;
                       self->on_request();
                     });
  }

 private:
  void on_request() {
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), core_)->run(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(false);
    const std::string target(req_.target());
    if (req_.method() == http::verb::get && target == "/mesh.obj" && !core_.mesh_text.empty()) {
      res->result(http::status::ok);
      res->set(http::field::content_type, "text/plain");
      res->body() = core_.mesh_text;
    } else if (req_.method() == http::verb::get && target == "/scene.json") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "application/json");
      res->body() = core_.scene_text;
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  ServiceCore& core_;
};

void ServiceCore::handle_message(WsSession& s, const std::string& text) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::parse_error&) {
    s.send(error_message("bad_message", "message is not valid JSON").dump());
    return;
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    s.send(error_message("bad_message", "message needs a string 'type'").dump());
    return;
  }
  const std::string type = msg["type"];
  if (type == "hello") {
    if (msg.value("protocol_version", -1) != kProtocolVersion) {
      s.send_and_close(error_message("protocol_version", "unsupported protocol version; server speaks " +
                                                             std::to_string(kProtocolVersion))
                           .dump());
    }
  } else if (type == "configure") {
    if (msg.contains("stride")) {
      if (!msg["stride"].is_number_unsigned() || msg["stride"].get<std::size_t>() == 0) {
        s.send(error_message("bad_message", "stride must be a positive integer").dump());
        return;
      }
      s.set_stride(msg["stride"].get<std::size_t>());
    }
    if (msg.contains("frames")) {
      if (!msg["frames"].is_boolean()) {
        s.send(error_message("bad_message", "frames must be true or false").dump());
        return;
      }
      s.set_frames(msg["frames"].get<bool>());
    }
  } else if (type == "command") {
    handle_command(s, msg);
  } else {
    s.send(error_message("bad_message", "unknown message type '" + type + "'").dump());
  }
}

void ServiceCore::post_and_log(const Command& c) {
  const CommandAck ack = engine->post_command(c);
  if (log) log->append({ack.id, ack.apply_step, c});
}

void ServiceCore::handle_command(WsSession& s, const json& msg) {
  const json id = msg.contains("id") ? msg["id"] : json(nullptr);
  Command c;
  try {
    c = command_from_json(msg);
  } catch (const ProtocolError& e) {
    s.send(error_message(e.code(), e.what()).dump());
    return;
  }
  if (!is_controller(&s) && controllers.size() >= options.max_controllers) {
    s.send(error_message("not_controller", "controller already bound").dump());
    return;
  }
  const auto key = std::make_pair(c.rod, c.index);
  if (c.kind == CommandKind::kGrab || c.kind == CommandKind::kRelease) {
    auto it = grab_owner.find(key);
    if (it != grab_owner.end() && it->second != &s) {
      s.send(error_message("rejected", "point is held by another controller").dump());
      return;
    }
  }
  CommandAck ack;
  try {
    ack = engine->post_command(c);
  } catch (const std::invalid_argument& e) {
    s.send(error_message("rejected", e.what()).dump());
    return;
  }
  if (log) log->append({ack.id, ack.apply_step, c});
  if (!is_controller(&s)) controllers.push_back(&s);
  if (c.kind == CommandKind::kGrab) grab_owner[key] = &s;
  if (c.kind == CommandKind::kRelease) grab_owner.erase(key);
  s.send(ack_message(id, ack.apply_step).dump());
}

void ServiceCore::on_close(WsSession& s) {
  // At shutdown no further step runs, so a release would only be logged, never applied.
  for (auto it = grab_owner.begin(); !stopping && it != grab_owner.end();) {
    if (it->second == &s) {
      post_and_log(Command::release(it->first.first, it->first.second));
      it = grab_owner.erase(it);
    } else {
      ++it;
    }
  }
  std::erase(controllers, &s);
  for (auto it = sessions.begin(); it != sessions.end(); ++it) {
    if (it->get() == &s) {
      // Defer the release so the session is not destroyed inside its own handler.
      auto keep = *it;
      sessions.erase(it);
      net::post(ioc, [keep] {});
      break;
    }
  }
}

}  // namespace

struct SimService::Impl : ServiceCore {
  std::thread io_thread;
  std::optional<net::executor_work_guard<net::io_context::executor_type>> work;
  std::thread step_thread;
  std::atomic<bool> running{false};
  std::atomic<std::uint64_t> steps{0};
  bool started = false;
  bool stopped = false;
  mutable std::mutex state_mutex;
  std::condition_variable state_cv;
  std::string failure;
  double checksum = 0;

  void do_accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), *this)->run();
      do_accept();
    });
  }

  void step_loop() {
    while (running.load()) {
      try {
        engine->run_epoch();
        steps.store(engine->world().step_index());
      } catch (const std::exception& e) {
        std::lock_guard lock(state_mutex);
        failure = e.what();
        running.store(false);
        state_cv.notify_all();
      }
    }
  }
};

SimService::SimService(SceneConfig scene, ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  if (options.stride == 0) throw std::invalid_argument("stride must be >= 1");
  if (!(options.frame_rate > 0.0)) throw std::invalid_argument("frame rate must be positive");
  if (options.max_controllers < 1 || options.max_controllers > 2) {
    throw std::invalid_argument("max controllers must be 1 or 2");
  }
  if (scene.world.broadphase_once_per_epoch && options.session_log) {
    throw std::invalid_argument("session recording requires broadphase.once_per_epoch to be off");
  }
  Impl& s = *impl_;
  // Absolute mesh path so the recorded scene replays from any directory.
  if (scene.mesh && scene.mesh->path) scene.mesh->path = std::filesystem::absolute(scene.resolve(*scene.mesh->path));
  s.scene = std::move(scene);
  s.options = std::move(options);
  auto mesh = build_mesh(s.scene);
  s.engine = std::make_unique<Engine>(build_world(s.scene, mesh), make_plan(s.scene));
  s.engine->set_step_pacing(s.options.step_pacing.value_or(std::chrono::nanoseconds(
      static_cast<std::int64_t>(s.scene.world.dt * 1e9))));
  s.hello = hello_message(s.engine->world(), s.options.stride);
  s.scene_text = scene_to_json(s.scene).dump(2);
  if (mesh) {
    std::ostringstream out;
    write_mesh(mesh->mesh(), out);
    s.mesh_text = out.str();
  }
  if (s.options.session_log) {
    s.log = std::make_unique<SessionWriter>(*s.options.session_log, scene_to_json(s.scene));
  }
}

SimService::~SimService() { stop(); }

void SimService::start() {
  Impl& s = *impl_;
  if (s.started) throw std::logic_error("service already started");
  try {
    const tcp::endpoint endpoint{net::ip::make_address(s.options.address), s.options.port};
    s.acceptor.open(endpoint.protocol());
    s.acceptor.set_option(net::socket_base::reuse_address(true));
    s.acceptor.bind(endpoint);
    s.acceptor.listen(net::socket_base::max_listen_connections);
  } catch (const boost::system::system_error& e) {
    throw std::runtime_error("cannot listen on " + s.options.address + ":" +
                             std::to_string(s.options.port) + ": " + e.code().message());
  }
  s.started = true;
  s.running.store(true);
  s.do_accept();
  s.work.emplace(s.ioc.get_executor());
  s.io_thread = std::thread([&s] { s.ioc.run(); });
  s.step_thread = std::thread([&s] { s.step_loop(); });
}

void SimService::stop() {
  Impl& s = *impl_;
  if (!s.started || s.stopped) return;
  s.running.store(false);
  if (s.step_thread.joinable()) s.step_thread.join();
  net::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
    s.stopping = true;
    auto sessions = s.sessions;
    for (const auto& session : sessions) session->shutdown();
  });
  // Let the closing handlers run (releases are logged), then stop the loop.
  std::promise<void> drained;
  auto done = drained.get_future();
  net::post(s.ioc, [&drained] { drained.set_value(); });
  done.wait_for(std::chrono::seconds(5));
  s.work.reset();
  s.ioc.stop();
  if (s.io_thread.joinable()) s.io_thread.join();

  std::lock_guard lock(s.state_mutex);
  s.checksum = configuration_checksum(s.engine->world().rods());
  if (s.log) s.log->finish(s.engine->world().step_index(), s.checksum);
  s.stopped = true;
  s.state_cv.notify_all();
}

void SimService::wait() {
  Impl& s = *impl_;
  std::unique_lock lock(s.state_mutex);
  s.state_cv.wait(lock, [&] { return s.stopped || !s.failure.empty(); });
}

unsigned short SimService::port() const {
  beast::error_code ec;
  const auto ep = impl_->acceptor.local_endpoint(ec);
  return ec ? impl_->options.port : ep.port();
}

std::uint64_t SimService::step_index() const { return impl_->steps.load(); }

double SimService::final_checksum() const {
  std::lock_guard lock(impl_->state_mutex);
  return impl_->checksum;
}

const World& SimService::world() const { return impl_->engine->world(); }

std::string SimService::failure() const {
  std::lock_guard lock(impl_->state_mutex);
  return impl_->failure;
}

}  // namespace corde
