#include "process.hpp"

#include "fixtures.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <stdexcept>

namespace qda::test {

Child::Child(std::vector<std::string> args) {
    int out[2];
    if (::pipe(out) != 0) throw std::runtime_error("pipe failed");
    pid_ = ::fork();
    if (pid_ < 0) throw std::runtime_error("fork failed");
    if (pid_ == 0) {
        ::dup2(out[1], STDOUT_FILENO);
        ::close(out[0]);
        ::close(out[1]);
        std::vector<char*> argv;
        argv.push_back(const_cast<char*>(qda_binary));
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        ::execv(qda_binary, argv.data());
        ::_exit(127);
    }
    ::close(out[1]);
    out_ = out[0];
}

Child::~Child() {
    if (pid_ > 0 && !reaped_) {
        ::kill(pid_, SIGKILL);
        wait();
    }
    if (out_ >= 0) ::close(out_);
}

std::string Child::read_line(int ms) {
    std::string line;
    char c;
    while (true) {
        pollfd p{out_, POLLIN, 0};
        if (::poll(&p, 1, ms) <= 0) return line;
        if (::read(out_, &c, 1) != 1) return line;
        if (c == '\n') return line;
        line += c;
    }
}

int Child::wait() {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    reaped_ = true;
    return status;
}

void Child::signal(int sig) { ::kill(pid_, sig); }

ServeProcess::ServeProcess(const std::string& storage, const std::string& mock_script) {
    std::vector<std::string> args{"serve",      "--listen", "127.0.0.1:0", "--storage", storage,
                                  "--provider", "mock",     "--clock",     "logical"};
    if (!mock_script.empty()) {
        args.push_back("--mock-script");
        args.push_back(mock_script);
    }
    child = std::make_unique<Child>(args);
    auto line = child->read_line();
    auto colon = line.rfind(':');
    if (line.rfind("listening on ", 0) != 0 || colon == std::string::npos) {
        throw std::runtime_error("qda serve did not start: '" + line + "'");
    }
    port = std::stoi(line.substr(colon + 1));
}

} // namespace qda::test
