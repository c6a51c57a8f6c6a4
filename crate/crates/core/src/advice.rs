//! Page-cache advice emission.
//!
//! The archive reports hot/cold transitions as interval deltas; backends
//! turn those into OS file-advice calls, or record them for inspection.

use crate::carvpath::ByteSet;
use std::sync::{Arc, Mutex};

/// Advice states for an archive byte range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Advice {
    /// Expected to be accessed again soon (normal/willneed class).
    Normal,
    /// Not expected to be accessed in the near future.
    DontNeed,
}

/// Sink for hot/cold transition deltas.
pub trait PageAdvisor: Send {
    fn advise(&mut self, offset: u64, len: u64, advice: Advice);
}

/// Discards all advice.
pub struct NullAdvisor;

impl PageAdvisor for NullAdvisor {
    fn advise(&mut self, _offset: u64, _len: u64, _advice: Advice) {}
}

/// One recorded advice event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdviceEvent {
    pub offset: u64,
    pub len: u64,
    pub advice: Advice,
}

/// Shared view of a [`RecordingAdvisor`]'s event stream.
#[derive(Clone, Default)]
pub struct AdviceLog {
    events: Arc<Mutex<Vec<AdviceEvent>>>,
}

impl AdviceLog {
    pub fn events(&self) -> Vec<AdviceEvent> {
        self.events.lock().expect("advice log poisoned").clone()
    }

    /// Cumulative normal-advised set minus dontneed-advised set, replayed
    /// in event order. At any quiescent point this equals the hot set.
    pub fn net_normal_set(&self) -> ByteSet {
        let mut net = ByteSet::empty();
        for event in self.events() {
            let range = ByteSet::interval(event.offset, event.offset + event.len);
            net = match event.advice {
                Advice::Normal => net.union(&range),
                Advice::DontNeed => net.subtract(&range),
            };
        }
        net
    }

    pub fn clear(&self) {
        self.events.lock().expect("advice log poisoned").clear();
    }
}

/// Advisor that appends every event to a shared [`AdviceLog`].
pub struct RecordingAdvisor {
    log: AdviceLog,
}

impl RecordingAdvisor {
    pub fn new() -> (RecordingAdvisor, AdviceLog) {
        let log = AdviceLog::default();
        (RecordingAdvisor { log: log.clone() }, log)
    }
}

impl PageAdvisor for RecordingAdvisor {
    fn advise(&mut self, offset: u64, len: u64, advice: Advice) {
        self.log
            .events
            .lock()
            .expect("advice log poisoned")
            .push(AdviceEvent { offset, len, advice });
    }
}

#[cfg(unix)]
pub use os::{FadviseAdvisor, MincoreResidency};

#[cfg(unix)]
mod os {
    use super::{Advice, PageAdvisor};
    use crate::opphash::ResidencyOracle;
    use std::os::unix::io::RawFd;

    /// Issues `posix_fadvise` on the backing file descriptor.
    ///
    /// Hot maps to `POSIX_FADV_WILLNEED`, cold to `POSIX_FADV_DONTNEED`.
    /// Advice is a hint; errors are ignored.
    pub struct FadviseAdvisor {
        fd: RawFd,
    }

    impl FadviseAdvisor {
        pub fn new(fd: RawFd) -> FadviseAdvisor {
            FadviseAdvisor { fd }
        }
    }

    impl PageAdvisor for FadviseAdvisor {
        fn advise(&mut self, offset: u64, len: u64, advice: Advice) {
            let flag = match advice {
                Advice::Normal => libc::POSIX_FADV_WILLNEED,
                Advice::DontNeed => libc::POSIX_FADV_DONTNEED,
            };
            unsafe {
                libc::posix_fadvise(self.fd, offset as libc::off_t, len as libc::off_t, flag);
            }
        }
    }

    /// Queries the OS page-residency facility (`mincore`) for the backing
    /// file via a transient mapping of the probed range.
    pub struct MincoreResidency {
        fd: RawFd,
        page_size: u64,
    }

    impl MincoreResidency {
        pub fn new(fd: RawFd) -> MincoreResidency {
            let page_size = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
            MincoreResidency { fd, page_size: page_size.max(1) as u64 }
        }
    }

    impl ResidencyOracle for MincoreResidency {
        fn resident_prefix(&mut self, offset: u64, len: u64) -> u64 {
            if len == 0 {
                return 0;
            }
            let page = self.page_size;
            let map_start = offset / page * page;
            let map_len = (offset + len - map_start) as usize;
            let pages = map_len.div_ceil(page as usize);
            unsafe {
                let addr = libc::mmap(
                    std::ptr::null_mut(),
                    map_len,
                    libc::PROT_READ,
                    libc::MAP_SHARED,
                    self.fd,
                    map_start as libc::off_t,
                );
                if addr == libc::MAP_FAILED {
                    return 0;
                }
                let mut vec = vec![0u8; pages];
                let rc = libc::mincore(addr, map_len, vec.as_mut_ptr() as *mut _);
                libc::munmap(addr, map_len);
                if rc != 0 {
                    return 0;
                }
                let mut resident_end = map_start;
                for (i, flags) in vec.iter().enumerate() {
                    if flags & 1 == 1 {
                        resident_end = map_start + (i as u64 + 1) * page;
                    } else {
                        break;
                    }
                }
                resident_end.saturating_sub(offset).min(len)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn net_normal_replays_in_order() {
        let (mut advisor, log) = RecordingAdvisor::new();
        advisor.advise(0, 10, Advice::Normal);
        advisor.advise(5, 5, Advice::DontNeed);
        advisor.advise(20, 4, Advice::Normal);
        assert_eq!(
            log.net_normal_set(),
            ByteSet::from_intervals([(0, 5), (20, 24)])
        );
        assert_eq!(log.events().len(), 3);
    }
}
