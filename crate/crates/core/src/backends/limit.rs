use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::Semaphore;

use super::{BackendError, ChatBackend, Conversation, ModelResponse};

/// Caps the number of requests in flight through the wrapped backend.
///
/// The semaphore can be shared between several wrappers to enforce one
/// global limit.
pub struct ConcurrencyLimit<B> {
    inner: B,
    permits: Arc<Semaphore>,
}

impl<B> ConcurrencyLimit<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Self::with_semaphore(inner, Arc::new(Semaphore::new(max_in_flight.max(1))))
    }

    pub fn with_semaphore(inner: B, permits: Arc<Semaphore>) -> Self {
        Self { inner, permits }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for ConcurrencyLimit<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .expect("semaphore is never closed");
        self.inner.complete(conversation).await
    }
}

/// Counts calls and tracks peak concurrency of the wrapped backend.
pub struct Instrumented<B> {
    inner: B,
    delay: Option<Duration>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl<B> Instrumented<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            delay: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    /// Holds every call open for `delay` before delegating, to make overlap observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for Instrumented<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak.fetch_max(now, Ordering::SeqCst);
        let result = self.inner.complete(conversation).await;
        if let Some(delay) = self.delay {
            tokio::time::sleep(delay).await;
        }
        result
    }
}
