use super::{Accounting, LinkConfig, LinkError, Meter, ProverLink, Reply, Responder, Transcript};
use crate::protocol::Message;

/// In-process link to a [`Responder`]. Frames are encoded and decoded on
/// both sides exactly as on a socket.
pub struct SimLink {
    responder: Box<dyn Responder>,
    acct: Accounting,
    /// Requests answered before the link goes silent.
    fail_after: Option<u64>,
    closed: bool,
}

impl SimLink {
    pub fn new(responder: Box<dyn Responder>, config: LinkConfig) -> Self {
        SimLink {
            responder,
            acct: Accounting { config, meter: Meter::default(), transcript: None },
            fail_after: None,
            closed: false,
        }
    }

    pub fn with_transcript(mut self, transcript: Transcript, link_id: u32) -> Self {
        self.acct.transcript = Some((transcript, link_id));
        self
    }

    /// Drops every request after the first `n` exchanges.
    pub fn fail_after(mut self, n: u64) -> Self {
        self.fail_after = Some(n);
        self
    }

    fn deliver(&mut self, message: &Message) -> Result<Reply, LinkError> {
        let frame = message.to_frame();
        self.acct.outgoing(&frame);
        if self.closed {
            return Err(LinkError::Closed);
        }
        let request = Message::from_frame(&frame).map_err(|e| LinkError::Decode(e.to_string()))?;
        Ok(self.responder.respond(&request))
    }
}

impl ProverLink for SimLink {
    fn exchange(&mut self, request: &Message) -> Result<Message, LinkError> {
        self.acct.meter.exchanges += 1;
        if self.fail_after.is_some_and(|n| self.acct.meter.exchanges > n) {
            self.acct.outgoing(&request.to_frame());
            self.acct.waited_out();
            return Err(LinkError::Timeout);
        }
        let reply = match self.deliver(request) {
            Ok(r) => r,
            Err(e) => {
                self.acct.waited_out();
                return Err(e);
            }
        };
        match reply {
            Reply::Send(msg) => {
                let frame = msg.to_frame();
                self.acct.incoming(&frame);
                Message::from_frame(&frame).map_err(|e| LinkError::Decode(e.to_string()))
            }
            Reply::Nothing => {
                self.acct.waited_out();
                Err(LinkError::Timeout)
            }
            Reply::Hangup => {
                self.closed = true;
                self.acct.waited_out();
                Err(LinkError::Closed)
            }
        }
    }

    fn send(&mut self, message: &Message) -> Result<(), LinkError> {
        match self.deliver(message)? {
            Reply::Hangup => {
                self.closed = true;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn meter(&self) -> Meter {
        self.acct.meter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Direction;

    struct Echo;

    impl Responder for Echo {
        fn respond(&mut self, request: &Message) -> Reply {
            match request {
                Message::Verdict { .. } => Reply::Nothing,
                Message::BalanceRequest { account: 0 } => Reply::Hangup,
                m => Reply::Send(m.clone()),
            }
        }
    }

    fn cfg() -> LinkConfig {
        LinkConfig { latency_us: 10_000, down_bps: 1_000_000, up_bps: 1_000_000, timeout_us: 500_000 }
    }

    #[test]
    fn meter_totals_are_frame_lengths() {
        let transcript = Transcript::new();
        let mut link = SimLink::new(Box::new(Echo), cfg()).with_transcript(transcript.clone(), 7);
        let msgs = [
            Message::Refused,
            Message::BalanceRequest { account: 9 },
            Message::Children(vec![crate::Digest::ZERO; 30]),
        ];
        let mut total = 0u64;
        let mut clock = 0u64;
        for m in &msgs {
            assert_eq!(&link.exchange(m).unwrap(), m);
            total += m.frame_len() as u64;
            clock += 2 * cfg().upload_us(m.frame_len());
        }
        let meter = link.meter();
        assert_eq!(meter.bytes_up, total);
        assert_eq!(meter.bytes_down, total);
        assert_eq!(meter.clock_us, clock);
        assert_eq!(meter.exchanges, 3);
        let entries = transcript.entries();
        assert_eq!(entries.len(), 6);
        assert!(entries.iter().all(|e| e.link == 7));
        assert_eq!(entries[1].direction, Direction::FromProver);
    }

    #[test]
    fn silence_and_hangup_cost_the_deadline() {
        let mut link = SimLink::new(Box::new(Echo), cfg());
        let v = Message::Verdict { verdict: crate::protocol::GameVerdict::WinA, disagreement: None };
        link.send(&v).unwrap();
        let after_send = link.meter().clock_us;
        assert_eq!(link.exchange(&v), Err(LinkError::Timeout));
        assert_eq!(link.meter().clock_us, after_send + cfg().upload_us(v.frame_len()) + 500_000);
        assert_eq!(link.exchange(&Message::BalanceRequest { account: 0 }), Err(LinkError::Closed));
        assert_eq!(link.exchange(&Message::Refused), Err(LinkError::Closed));
    }

    #[test]
    fn injected_drop() {
        let mut link = SimLink::new(Box::new(Echo), cfg()).fail_after(2);
        assert!(link.exchange(&Message::Refused).is_ok());
        assert!(link.exchange(&Message::Refused).is_ok());
        assert_eq!(link.exchange(&Message::Refused), Err(LinkError::Timeout));
        assert_eq!(link.meter().bytes_down, 10);
    }
}
