//! Lookup of the next definition of an intercepted symbol, plus the
//! per-thread guard that sends nested calls straight to it.

use std::cell::Cell;
use std::ffi::c_void;

extern "C" {
    fn dlsym(handle: *mut c_void, symbol: *const libc::c_char) -> *mut c_void;
}

const RTLD_NEXT: *mut c_void = -1isize as *mut c_void;

/// Resolves `name` (NUL-terminated) past this library. Aborts when the C
/// library lacks it; there is nothing sensible to return to the guest.
pub fn next_symbol(name: &'static str) -> usize {
    let p = unsafe { dlsym(RTLD_NEXT, name.as_ptr() as *const libc::c_char) };
    if p.is_null() {
        let msg = b"boxer-monitor: missing libc symbol\n";
        unsafe {
            libc::write(2, msg.as_ptr() as *const c_void, msg.len());
            libc::abort();
        }
    }
    p as usize
}

/// Expands to the real function pointer for `$name`, resolved once.
macro_rules! real {
    ($name:ident : fn($($arg:ty),*) -> $ret:ty) => {{
        static SLOT: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
        let mut p = SLOT.load(std::sync::atomic::Ordering::Relaxed);
        if p == 0 {
            p = $crate::real::next_symbol(concat!(stringify!($name), "\0"));
            SLOT.store(p, std::sync::atomic::Ordering::Relaxed);
        }
        unsafe { std::mem::transmute::<usize, unsafe extern "C" fn($($arg),*) -> $ret>(p) }
    }};
}
pub(crate) use real;

thread_local! {
    static INSIDE: Cell<bool> = const { Cell::new(false) };
}

/// Held while a hook body runs. Anything the body calls that lands back in
/// an exported symbol (std's own sockets and file handles) sees the guard and
/// goes native.
pub struct Guard(());

impl Guard {
    pub fn enter() -> Option<Guard> {
        // try_with fails only during thread teardown; treat that as nested.
        let entered = INSIDE.try_with(|c| !c.replace(true)).unwrap_or(false);
        entered.then_some(Guard(()))
    }
}

impl Drop for Guard {
    fn drop(&mut self) {
        let _ = INSIDE.try_with(|c| c.set(false));
    }
}
