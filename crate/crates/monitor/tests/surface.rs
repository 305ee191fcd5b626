use std::collections::HashSet;
use std::ffi::{c_void, CStr, CString};
use std::path::PathBuf;

use boxer_monitor::{INTERCEPT_SURFACE, NEVER_INTERCEPTED};

fn shim_path() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    [
        deps.join("libboxer_monitor.so"),
        deps.parent().unwrap().join("libboxer_monitor.so"),
    ]
    .into_iter()
    .find(|p| p.exists())
    .expect("shim built alongside the tests")
}

#[test]
fn surface_has_24_distinct_control_path_calls() {
    let set: HashSet<_> = INTERCEPT_SURFACE.iter().collect();
    assert_eq!(set.len(), 24);
    for forbidden in NEVER_INTERCEPTED {
        assert!(!set.contains(&forbidden), "{forbidden} must stay native");
    }
    for required in [
        "socket",
        "bind",
        "connect",
        "listen",
        "accept",
        "getaddrinfo",
        "uname",
        "open",
        "close",
    ] {
        assert!(set.contains(&required), "{required} missing");
    }
}

#[test]
fn shim_exports_exactly_the_surface() {
    let path = CString::new(shim_path().to_str().unwrap()).unwrap();
    unsafe {
        let handle = libc::dlopen(path.as_ptr(), libc::RTLD_NOW | libc::RTLD_LOCAL);
        assert!(!handle.is_null(), "dlopen failed");
        let own = |name: &str| -> bool {
            let sym = CString::new(name).unwrap();
            let p = libc::dlsym(handle, sym.as_ptr());
            if p.is_null() {
                return false;
            }
            let mut info: libc::Dl_info = std::mem::zeroed();
            libc::dladdr(p as *const c_void, &mut info) != 0
                && CStr::from_ptr(info.dli_fname)
                    .to_string_lossy()
                    .contains("libboxer_monitor")
        };
        for name in INTERCEPT_SURFACE {
            assert!(own(name), "{name} not defined by the shim");
        }
        for name in NEVER_INTERCEPTED {
            assert!(!own(name), "{name} must not be defined by the shim");
        }
    }
}
