#pragma once

namespace saltpepper {

/// Keeps freed activation buffers in the heap instead of returning them to the
/// OS after every forward pass. No-op outside glibc.
void configure_allocator() noexcept;

} // namespace saltpepper
