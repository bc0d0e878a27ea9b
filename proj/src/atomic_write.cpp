/*
 * Copyright 2026 The qshape Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <fcntl.h>
#include <stdio.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qshape/error.hpp"
#include "qshape/io.hpp"

namespace qshape {

namespace fs = std::filesystem;

namespace {

std::string unique_suffix() {
  static std::atomic<unsigned> counter{0};
  std::ostringstream os;
  os << ".tmp-" << ::getpid() << '-' << counter.fetch_add(1);
  return os.str();
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + unique_suffix();
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) {
    throw FormatError("cannot write " + path.string() + ": " + std::strerror(errno));
  }
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string why = std::strerror(errno);
      ::close(fd);
      ::unlink(tmp.c_str());
      throw FormatError("write failed for " + path.string() + ": " + why);
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    ::unlink(tmp.c_str());
    throw FormatError("cannot flush " + path.string());
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    const std::string why = std::strerror(errno);
    ::unlink(tmp.c_str());
    throw FormatError("cannot replace " + path.string() + ": " + why);
  }
}

fs::path make_staging_dir(const fs::path& target) {
  const fs::path parent = target.has_parent_path() ? target.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(parent, ec);
  const fs::path staged = parent / (target.filename().string() + unique_suffix());
  fs::remove_all(staged, ec);
  if (!fs::create_directory(staged, ec) || ec) {
    throw FormatError("cannot create staging directory " + staged.string());
  }
  return staged;
}

void commit_directory(const fs::path& staged, const fs::path& target) {
  std::error_code ec;
  if (fs::exists(target)) {
#ifdef RENAME_EXCHANGE
    if (::renameat2(AT_FDCWD, staged.c_str(), AT_FDCWD, target.c_str(),
                    RENAME_EXCHANGE) == 0) {
      fs::remove_all(staged, ec);
      return;
    }
#endif
    const fs::path old = target.string() + unique_suffix();
    fs::rename(target, old, ec);
    if (ec) throw FormatError("cannot move aside " + target.string());
    fs::rename(staged, target, ec);
    if (ec) {
      fs::rename(old, target);
      throw FormatError("cannot install " + target.string());
    }
    fs::remove_all(old, ec);
    return;
  }
  fs::rename(staged, target, ec);
  if (ec) throw FormatError("cannot install " + target.string() + ": " + ec.message());
}

}  // namespace qshape
