use alloc::boxed::Box;
use core::sync::atomic::{AtomicPtr, Ordering};

/// Minimal once-initialized cell usable without `std`.
///
/// Losers of the initialization race drop their value and use the winner's;
/// the stored box is intentionally leaked for the life of the program (these
/// cells only back `static` tables).
pub struct Lazy<T> {
    ptr: AtomicPtr<T>,
}

impl<T> Lazy<T> {
    pub const fn new() -> Self {
        Self {
            ptr: AtomicPtr::new(core::ptr::null_mut()),
        }
    }

    pub fn get_or_init(&self, init: impl FnOnce() -> T) -> &T {
        let p = self.ptr.load(Ordering::Acquire);
        if !p.is_null() {
            return unsafe { &*p };
        }
        let fresh = Box::into_raw(Box::new(init()));
        match self.ptr.compare_exchange(
            core::ptr::null_mut(),
            fresh,
            Ordering::AcqRel,
            Ordering::Acquire,
        ) {
            Ok(_) => unsafe { &*fresh },
            Err(winner) => unsafe {
                drop(Box::from_raw(fresh));
                &*winner
            },
        }
    }
}

impl<T> Default for Lazy<T> {
    fn default() -> Self {
        Self::new()
    }
}

unsafe impl<T: Send + Sync> Sync for Lazy<T> {}
unsafe impl<T: Send> Send for Lazy<T> {}
