/* Copyright 2026 The hcinfer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Frame layout on a local stream socket, all integers little-endian:
//   u64  length of everything that follows
//   u8   message kind
//   u64  tag
//   u64  shape rank, then u64 per dimension
//   f64  raw tensor elements, row-major

#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/tensor.hpp"

namespace hcinfer::wire {

enum class FrameKind : std::uint8_t { data = 1, control = 2, shutdown = 3 };

struct Frame {
  FrameKind kind = FrameKind::data;
  std::uint64_t tag = 0;
  Tensor tensor;
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw ProtocolError("truncated frame");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Frame& f) {
  std::vector<std::uint8_t> body;
  body.push_back(static_cast<std::uint8_t>(f.kind));
  detail::put_u64(body, f.tag);
  detail::put_u64(body, f.tensor.rank());
  for (auto d : f.tensor.shape()) detail::put_u64(body, d);
  for (double v : f.tensor.data()) detail::put_u64(body, std::bit_cast<std::uint64_t>(v));
  std::vector<std::uint8_t> out;
  out.reserve(body.size() + 8);
  detail::put_u64(out, body.size());
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

/// Decodes one frame from the front of `bytes`. Returns the frame and the
/// number of bytes consumed, or nullopt if the buffer holds a partial frame.
inline std::optional<std::pair<Frame, std::size_t>> decode(
    std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) return std::nullopt;
  std::size_t pos = 0;
  const std::uint64_t len = detail::get_u64(bytes, pos);
  if (bytes.size() < 8 + len) return std::nullopt;
  auto body = bytes.subspan(8, len);
  pos = 0;
  if (body.empty()) throw ProtocolError("empty frame");
  const auto kind = body[pos++];
  if (kind < 1 || kind > 3) throw ProtocolError("unknown frame kind " + std::to_string(kind));
  Frame f;
  f.kind = static_cast<FrameKind>(kind);
  f.tag = detail::get_u64(body, pos);
  const std::uint64_t rank = detail::get_u64(body, pos);
  if (rank == 0 || rank > 16) throw ProtocolError("bad shape rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = detail::get_u64(body, pos);
  const std::size_t n = shape_size(shape);
  if (body.size() - pos != n * 8) {
    throw ProtocolError("frame body holds " + std::to_string(body.size() - pos) +
                        " bytes, shape " + shape_string(shape) + " needs " +
                        std::to_string(n * 8));
  }
  std::vector<double> data(n);
  for (auto& v : data) v = std::bit_cast<double>(detail::get_u64(body, pos));
  f.tensor = Tensor(std::move(shape), std::move(data));
  return std::make_pair(std::move(f), static_cast<std::size_t>(8 + len));
}

/// Owning wrapper around a connected stream socket.
class SocketLink {
 public:
  explicit SocketLink(int fd) : fd_(fd) {}
  SocketLink(SocketLink&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  SocketLink& operator=(SocketLink&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  SocketLink(const SocketLink&) = delete;
  SocketLink& operator=(const SocketLink&) = delete;
  ~SocketLink() { reset(); }

  void send(const Frame& f) {
    auto bytes = encode(f);
    std::size_t off = 0;
    while (off < bytes.size()) {
      ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("socket send: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  /// Blocks for the next frame; nullopt on orderly peer close.
  std::optional<Frame> recv() {
    for (;;) {
      if (auto f = decode(buffer_)) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(f->second));
        return std::move(f->first);
      }
      std::uint8_t chunk[4096];
      ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("socket recv: ") + std::strerror(errno));
      }
      if (n == 0) {
        if (!buffer_.empty()) throw ProtocolError("peer closed mid-frame");
        return std::nullopt;
      }
      buffer_.insert(buffer_.end(), chunk, chunk + n);
    }
  }

  void shutdown_write() { ::shutdown(fd_, SHUT_WR); }

 private:
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  int fd_;
  std::vector<std::uint8_t> buffer_;
};

inline std::pair<SocketLink, SocketLink> socket_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
    throw ProtocolError(std::string("socketpair: ") + std::strerror(errno));
  }
  return {SocketLink(fds[0]), SocketLink(fds[1])};
}

}  // namespace hcinfer::wire
