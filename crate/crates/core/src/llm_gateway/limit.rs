use std::sync::{Condvar, Mutex};

use super::{ChatBackend, ChatRequest, Completion, GatewayError};

/// Caps the number of concurrent `complete` calls on the wrapped backend.
/// Waiters are not served in FIFO order.
pub struct Limited<B> {
    inner: B,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<B: ChatBackend> Limited<B> {
    pub fn new(inner: B, limit: usize) -> Result<Self, GatewayError> {
        if limit == 0 {
            return Err(GatewayError::Config("in-flight limit must be at least 1".into()));
        }
        Ok(Self {
            inner,
            limit,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

struct Permit<'a> {
    count: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.freed.notify_one();
    }
}

impl<B: ChatBackend> ChatBackend for Limited<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let _permit = {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
            Permit {
                count: &self.in_flight,
                freed: &self.freed,
            }
        };
        self.inner.complete(request)
    }

    fn is_live(&self) -> bool {
        self.inner.is_live()
    }
}
