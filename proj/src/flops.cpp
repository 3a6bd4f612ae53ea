#include "cea/flops.hpp"

namespace cea {

namespace {
thread_local std::uint64_t g_macs = 0;
}

std::uint64_t MacCounter::value() { return g_macs; }
void MacCounter::add(std::uint64_t macs) { g_macs += macs; }
void MacCounter::reset() { g_macs = 0; }

MacScope::MacScope() : saved_(g_macs) { g_macs = 0; }
MacScope::~MacScope() { g_macs += saved_; }
std::uint64_t MacScope::count() const { return g_macs; }

}  // namespace cea
