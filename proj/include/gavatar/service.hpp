// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/checkpoint.hpp"
#include "gavatar/dataset.hpp"
#include "gavatar/image_io.hpp"
#include "gavatar/pipeline.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace gav {

struct ServiceConfig {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;  // 0 lets the OS choose
    int width = 256, height = 256;
    double fov_y_deg = 40.0;
    Orbit orbit{0.0, 10.0, 2.5, {0.0, 0.5, 0.0}};
    Vec3 background{};
    int threads = 0;
    std::filesystem::path ui_root;  // static files served under /ui when set
};

/// Read-only avatar data. Handlers swap the pointer, renders hold a copy of it.
struct AvatarSnapshot {
    GaussianCloud cloud;
    RefinementNet net;

    const RefinementNet* net_ptr() const { return net.parameter_count() > 0 ? &net : nullptr; }
};

struct SessionState {
    std::shared_ptr<const AvatarSnapshot> avatar;
    Pose pose;
    Camera camera;
    Orbit orbit;
    double time = 0.0;
    Vec3 background{};
    std::uint64_t seq = 0;
};

struct StreamFrame {
    std::uint64_t seq = 0;
    double render_ms = 0.0;
    int width = 0, height = 0;
    std::vector<unsigned char> png;
    std::vector<float> rgb;  // linear RGB for raw subscribers
};

inline Framebuffer render_state(const SkinnedBody& body, const SessionState& s, int threads = 0) {
    RenderOptions opt;
    opt.threads = threads;
    return render(s.avatar->cloud, body, s.pose, s.avatar->net_ptr(), s.time, s.camera, s.background, nullptr, opt);
}

inline Image framebuffer_image(const Framebuffer& fb) {
    Image img(fb.width, fb.height);
    img.data = fb.color;
    return img;
}

/// Wraps an angle into [0, 360).
inline double wrap_degrees(double deg) {
    double w = std::fmod(deg, 360.0);
    if (w < 0.0) w += 360.0;
    return w == 360.0 ? 0.0 : w;
}

/// HTTP/WebSocket render service around one loaded avatar.
///
/// Request handlers mutate SessionState under a short lock and bump seq. A
/// single render worker renders the newest state for /stream subscribers, so
/// a burst of mutations collapses into one frame for the latest seq.
class AvatarService {
public:
    AvatarService(SkinnedBody body, ServiceConfig cfg) : body_(std::move(body)), cfg_(std::move(cfg)) {
        validate_body(body_);
        state_.pose = Pose::rest(body_.joint_count());
        state_.camera = camera_from_fov(cfg_.width, cfg_.height, cfg_.fov_y_deg);
        state_.orbit = cfg_.orbit;
        state_.orbit.azimuth_deg = wrap_degrees(state_.orbit.azimuth_deg);
        apply_orbit(state_.camera, state_.orbit);
        state_.background = cfg_.background;
    }

    ~AvatarService() { stop(); }

    AvatarService(const AvatarService&) = delete;
    AvatarService& operator=(const AvatarService&) = delete;

    void load(const Checkpoint& ck) {
        if (!ck.cloud.bindings.empty() && static_cast<int>(ck.cloud.weights.size()) !=
                                               static_cast<int>(ck.cloud.size()) * body_.joint_count())
            fail(ErrorCode::JointCountMismatch, "checkpoint weights do not match the body's " +
                                                    std::to_string(body_.joint_count()) + " joints");
        auto snap = std::make_shared<AvatarSnapshot>();
        snap->cloud = ck.cloud;
        snap->net = ck.net;
        {
            std::lock_guard lock(mutex_);
            state_.avatar = std::move(snap);
            ++state_.seq;
        }
        cv_.notify_all();
    }

    bool loaded() const {
        std::lock_guard lock(mutex_);
        return state_.avatar != nullptr;
    }

    SessionState state() const {
        std::lock_guard lock(mutex_);
        return state_;
    }

    const SkinnedBody& body() const { return body_; }

    /// Binds and starts serving; returns the bound port.
    unsigned short start() {
        namespace net = boost::asio;
        const auto addr = net::ip::make_address(cfg_.address);
        acceptor_.emplace(ioc_);
        const net::ip::tcp::endpoint ep{addr, cfg_.port};
        acceptor_->open(ep.protocol());
        acceptor_->set_option(net::socket_base::reuse_address(true));
        acceptor_->bind(ep);
        acceptor_->listen();
        port_ = acceptor_->local_endpoint().port();
        running_ = true;
        do_accept();
        io_thread_ = std::thread([this] { ioc_.run(); });
        render_thread_ = std::thread([this] { render_loop(); });
        return port_;
    }

    unsigned short port() const { return port_; }

    /// Blocks until stop() is called from another thread or a signal handler.
    void wait() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return !running_; });
    }

    void stop() {
        {
            std::lock_guard lock(mutex_);
            if (!running_ && !io_thread_.joinable()) return;
            running_ = false;
        }
        cv_.notify_all();
        boost::asio::post(ioc_, [this] {
            boost::system::error_code ec;
            if (acceptor_) acceptor_->close(ec);
        });
        {
            std::lock_guard lock(sessions_mutex_);
            for (auto& s : sockets_) {
                boost::system::error_code ec;
                s->shutdown(boost::asio::ip::tcp::socket::shutdown_both, ec);
            }
        }
        if (io_thread_.joinable()) io_thread_.join();
        if (render_thread_.joinable()) render_thread_.join();
        std::unique_lock lock(sessions_mutex_);
        sessions_cv_.wait(lock, [&] { return sockets_.empty(); });
    }

    // Request handling is exposed for in-process use and testing.

    struct Reply {
        unsigned status = 200;
        std::string content_type = "application/json";
        std::string body;
    };

    Reply handle(const std::string& method, const std::string& target, const std::string& body) {
        const std::string path = target.substr(0, target.find('?'));
        try {
            if (method == "GET" && path == "/info") return json_reply(200, info());
            if (method == "GET" && path == "/frame.png") return frame_png();
            if (method == "POST" && path == "/pose") return mutate_pose(parse_body(body));
            if (method == "POST" && path == "/camera") return mutate_orbit(parse_body(body));
            if (method == "POST" && path == "/camera/raw") return mutate_raw_camera(parse_body(body));
            if (method == "GET" && (path == "/ui" || path.rfind("/ui/", 0) == 0)) return static_file(path);
            if (path == "/info" || path == "/frame.png" || path == "/pose" || path == "/camera" || path == "/camera/raw")
                return error_reply(405, "method " + method + " not allowed on " + path);
            return error_reply(404, "no route for " + path);
        } catch (const Error& e) {
            return error_reply(400, e.detail(), std::string(to_string(e.code())));
        }
    }

    nlohmann::json info() const {
        const SessionState s = state();
        nlohmann::json j{{"joints", body_.joint_count()},
                         {"joint_names", body_.joint_names},
                         {"vertices", body_.vertices.size()},
                         {"faces", body_.faces.size()},
                         {"width", s.camera.width},
                         {"height", s.camera.height},
                         {"seq", s.seq},
                         {"loaded", s.avatar != nullptr},
                         {"gaussians", s.avatar ? s.avatar->cloud.size() : 0},
                         {"sh_degree", s.avatar ? s.avatar->cloud.sh_degree : 0},
                         {"orbit", orbit_json(s.orbit)}};
        return j;
    }

    /// Newest frame produced by the render worker, if any.
    std::optional<StreamFrame> latest_frame() const {
        std::lock_guard lock(mutex_);
        if (!latest_) return std::nullopt;
        return *latest_;
    }

private:
    static nlohmann::json orbit_json(const Orbit& o) {
        return {{"azimuth", o.azimuth_deg}, {"elevation", o.elevation_deg}, {"radius", o.radius}, {"target", detail::to_json(o.target)}};
    }

    static nlohmann::json parse_body(const std::string& body) {
        try {
            return nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what());
        }
    }

    static Reply json_reply(unsigned status, const nlohmann::json& j) { return {status, "application/json", j.dump()}; }

    static Reply error_reply(unsigned status, const std::string& msg, const std::string& code = {}) {
        nlohmann::json j{{"error", msg}};
        if (!code.empty()) j["code"] = code;
        return json_reply(status, j);
    }

    Reply not_loaded() const { return error_reply(409, "no checkpoint loaded"); }

    Reply accepted(std::uint64_t seq) {
        cv_.notify_all();
        return json_reply(200, {{"seq", seq}});
    }

    Reply frame_png() {
        const SessionState s = state();
        if (!s.avatar) return not_loaded();
        const Framebuffer fb = render_state(body_, s, cfg_.threads);
        const auto png = encode_png(quantize(framebuffer_image(fb)));
        return {200, "image/png", std::string(png.begin(), png.end())};
    }

    Reply mutate_pose(const nlohmann::json& j) {
        if (!loaded()) return not_loaded();
        Pose p = pose_from_json(j, "pose");
        if (p.joint_count() != body_.joint_count())
            return error_reply(400, "pose has " + std::to_string(p.joint_count()) + " joint rotations, expected " +
                                        std::to_string(body_.joint_count()),
                               "JointCountMismatch");
        validate_pose(p);
        double time = -1.0;
        if (j.contains("time")) {
            if (!j["time"].is_number() || j["time"].get<double>() < 0.0 || j["time"].get<double>() > 1.0)
                return error_reply(400, "time must be a number in [0, 1]", "ValidationError");
            time = j["time"].get<double>();
        }
        std::uint64_t seq = 0;
        {
            std::lock_guard lock(mutex_);
            state_.pose = std::move(p);
            if (time >= 0.0) state_.time = time;
            seq = ++state_.seq;
        }
        return accepted(seq);
    }

    Reply mutate_orbit(const nlohmann::json& j) {
        if (!loaded()) return not_loaded();
        if (!j.is_object()) return error_reply(400, "camera body must be a JSON object", "ValidationError");
        Orbit o = state().orbit;
        auto number = [&](const char* key, double& out) {
            if (!j.contains(key)) return;
            if (!j[key].is_number()) fail(ErrorCode::ValidationError, std::string("'") + key + "' must be a number");
            out = j[key].get<double>();
            if (!std::isfinite(out)) fail(ErrorCode::ValidationError, std::string("'") + key + "' must be finite");
        };
        number("azimuth", o.azimuth_deg);
        number("elevation", o.elevation_deg);
        number("radius", o.radius);
        if (j.contains("target")) o.target = detail::json_vec3(j["target"], "target");
        o.azimuth_deg = wrap_degrees(o.azimuth_deg);
        Camera cam = state().camera;
        apply_orbit(cam, o);
        std::uint64_t seq = 0;
        {
            std::lock_guard lock(mutex_);
            state_.orbit = o;
            state_.camera.rotation = cam.rotation;
            state_.camera.translation = cam.translation;
            seq = ++state_.seq;
        }
        return accepted(seq);
    }

    Reply mutate_raw_camera(const nlohmann::json& j) {
        if (!loaded()) return not_loaded();
        const Camera cam = detail::camera_from_json(j, "camera");
        validate_camera(cam);
        std::uint64_t seq = 0;
        {
            std::lock_guard lock(mutex_);
            state_.camera = cam;
            seq = ++state_.seq;
        }
        return accepted(seq);
    }

    Reply static_file(const std::string& path) const {
        if (cfg_.ui_root.empty()) return error_reply(404, "no viewer bundle configured");
        std::string rel = path.size() > 4 ? path.substr(4) : "";
        if (rel.empty()) rel = "index.html";
        if (rel.find("..") != std::string::npos) return error_reply(404, "bad path");
        const auto file = cfg_.ui_root / rel;
        if (!std::filesystem::is_regular_file(file)) return error_reply(404, "not found: " + rel);
        const auto bytes = read_file_bytes(file);
        const auto ext = file.extension().string();
        std::string type = "application/octet-stream";
        if (ext == ".html") type = "text/html";
        else if (ext == ".js") type = "text/javascript";
        else if (ext == ".css") type = "text/css";
        else if (ext == ".json") type = "application/json";
        return {200, type, std::string(bytes.begin(), bytes.end())};
    }

    void render_loop() {
        std::uint64_t rendered = 0;
        for (;;) {
            SessionState s;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return !running_ || (state_.avatar && state_.seq != rendered && subscribers_ > 0); });
                if (!running_) return;
                s = state_;
            }
            const auto t0 = std::chrono::steady_clock::now();
            const Framebuffer fb = render_state(body_, s, cfg_.threads);
            auto frame = std::make_shared<StreamFrame>();
            frame->seq = s.seq;
            frame->width = fb.width;
            frame->height = fb.height;
            frame->png = encode_png(quantize(framebuffer_image(fb)));
            frame->rgb.assign(fb.color.begin(), fb.color.end());
            frame->render_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            {
                std::lock_guard lock(mutex_);
                latest_ = std::move(frame);
            }
            rendered = s.seq;
            cv_.notify_all();
        }
    }

    void do_accept() {
        acceptor_->async_accept([this](boost::system::error_code ec, boost::asio::ip::tcp::socket socket) {
            if (ec) {
                if (running_ && ec != boost::asio::error::operation_aborted) do_accept();
                return;
            }
            auto sock = std::make_shared<boost::asio::ip::tcp::socket>(std::move(socket));
            {
                std::lock_guard lock(sessions_mutex_);
                sockets_.push_back(sock);
            }
            // The socket must die before stop() can return, so the thread drops
            // its reference under the same lock that stop() waits on.
            std::thread([this, sock]() mutable {
                serve_connection(*sock);
                std::lock_guard l(sessions_mutex_);
                sockets_.remove(sock);
                sock.reset();
                sessions_cv_.notify_all();
            }).detach();
            if (running_) do_accept();
        });
    }

    void serve_connection(boost::asio::ip::tcp::socket& socket) {
        namespace beast = boost::beast;
        namespace http = beast::http;
        beast::flat_buffer buffer;
        try {
            for (;;) {
                http::request<http::string_body> req;
                http::read(socket, buffer, req);
                if (beast::websocket::is_upgrade(req)) {
                    if (req.target().substr(0, 7) == "/stream") {
                        stream(socket, req);
                    } else {
                        write_reply(socket, req, error_reply(404, "websocket only on /stream"));
                    }
                    return;
                }
                const Reply r = handle(std::string(req.method_string()), std::string(req.target()), req.body());
                if (!write_reply(socket, req, r)) return;
            }
        } catch (const std::exception&) {
            // Connection closed or malformed request; drop it.
        }
    }

    static bool write_reply(boost::asio::ip::tcp::socket& socket, const boost::beast::http::request<boost::beast::http::string_body>& req,
                            const Reply& r) {
        namespace http = boost::beast::http;
        http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
        res.set(http::field::content_type, r.content_type);
        res.set(http::field::access_control_allow_origin, "*");
        res.keep_alive(req.keep_alive());
        res.body() = r.body;
        res.prepare_payload();
        http::write(socket, res);
        return req.keep_alive();
    }

    void stream(boost::asio::ip::tcp::socket& socket, const boost::beast::http::request<boost::beast::http::string_body>& req) {
        namespace websocket = boost::beast::websocket;
        const bool raw = std::string(req.target()).find("raw=1") != std::string::npos;
        websocket::stream<boost::asio::ip::tcp::socket&> ws(socket);
        ws.accept(req);
        {
            std::lock_guard lock(mutex_);
            ++subscribers_;
        }
        cv_.notify_all();
        struct Unsubscribe {
            AvatarService* self;
            ~Unsubscribe() {
                std::lock_guard lock(self->mutex_);
                --self->subscribers_;
            }
        } guard{this};
        std::uint64_t sent = 0;
        for (;;) {
            std::shared_ptr<const StreamFrame> frame;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return !running_ || (latest_ && latest_->seq != sent); });
                if (!running_) break;
                frame = latest_;
            }
            const nlohmann::json header{{"seq", frame->seq},
                                        {"render_ms", frame->render_ms},
                                        {"width", frame->width},
                                        {"height", frame->height},
                                        {"format", raw ? "rgb32f" : "png"}};
            ws.text(true);
            ws.write(boost::asio::buffer(header.dump()));
            ws.binary(true);
            if (raw) ws.write(boost::asio::buffer(frame->rgb.data(), frame->rgb.size() * sizeof(float)));
            else ws.write(boost::asio::buffer(frame->png));
            sent = frame->seq;
        }
        boost::system::error_code ec;
        ws.close(websocket::close_code::going_away, ec);
    }

    SkinnedBody body_;
    ServiceConfig cfg_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    SessionState state_;
    std::shared_ptr<const StreamFrame> latest_;
    int subscribers_ = 0;
    std::atomic<bool> running_{false};

    boost::asio::io_context ioc_;
    std::optional<boost::asio::ip::tcp::acceptor> acceptor_;
    unsigned short port_ = 0;
    std::thread io_thread_, render_thread_;
    std::mutex sessions_mutex_;
    std::condition_variable sessions_cv_;
    std::list<std::shared_ptr<boost::asio::ip::tcp::socket>> sockets_;  // one per live connection thread
};

} // namespace gav
