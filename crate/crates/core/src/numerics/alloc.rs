//! Allocator tuning for the training loops.
//!
//! Activations are large, short-lived buffers. glibc serves them with fresh
//! `mmap`s and unmaps them on free, so every step pays first-touch page
//! faults for its whole working set. Keeping freed memory in the heap makes
//! the steady state several times faster on fault-heavy hosts.

/// Raises glibc's mmap and trim thresholds. No-op elsewhere; idempotent.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        // Serve everything from the heap and never trim it back. Some glibc
        // versions cap the mmap threshold at 32 MiB.
        if libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30) == 0 {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 25);
        }
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
