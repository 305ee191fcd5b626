mod support;

use boxer_proto::control::ControlMessage;
use boxer_proto::frame::{decode_frame, encode_frame, Decoded, FrameError, Message, FRAME_CAP};
use boxer_proto::service::{kind, ServiceRequest, ServiceResponse};
use boxer_proto::{Inode, Status, WireError};
use proptest::prelude::*;
use support::arb::{check_round_trip_and_prefixes, control, request, response};

fn decode_one<M: Message + std::fmt::Debug>(bytes: &[u8]) -> (M, &[u8]) {
    match decode_frame::<M>(bytes).unwrap() {
        Decoded::Frame { message, rest } => (message, rest),
        Decoded::NeedMoreData => panic!("incomplete frame"),
    }
}

#[test]
fn uname_is_a_five_byte_frame() {
    let f = encode_frame(&ServiceRequest::Uname).unwrap();
    assert_eq!(f, vec![0, 0, 0, 1, kind::UNAME]);
}

#[test]
fn name_lookup_round_trips() {
    let req = ServiceRequest::NameLookup {
        name: "nginx-thrift".into(),
    };
    let f = encode_frame(&req).unwrap();
    let (back, rest) = decode_one::<ServiceRequest>(&f);
    assert_eq!(back, req);
    assert!(rest.is_empty());
}

#[test]
fn accept_round_trips_with_empty_remainder() {
    let f = encode_frame(&ServiceRequest::Accept {
        inode: Inode(7),
        blocking: true,
    })
    .unwrap();
    let (back, rest) = decode_one::<ServiceRequest>(&f);
    assert_eq!(
        back,
        ServiceRequest::Accept {
            inode: Inode(7),
            blocking: true
        }
    );
    assert!(rest.is_empty());
}

#[test]
fn empty_input_needs_more_data() {
    assert_eq!(
        decode_frame::<ServiceRequest>(&[]).unwrap(),
        Decoded::NeedMoreData
    );
}

#[test]
fn two_concatenated_frames_decode_in_order() {
    let a = ServiceRequest::Listen {
        inode: Inode(1),
        backlog: 16,
    };
    let b = ServiceRequest::PathRemap {
        path: "/etc/hosts".into(),
    };
    let mut bytes = encode_frame(&a).unwrap();
    let second = encode_frame(&b).unwrap();
    bytes.extend_from_slice(&second);
    let (first, rest) = decode_one::<ServiceRequest>(&bytes);
    assert_eq!(first, a);
    assert_eq!(rest, &second[..]);
    let (next, rest) = decode_one::<ServiceRequest>(rest);
    assert_eq!(next, b);
    assert!(rest.is_empty());
}

/// PathRemap body = 4-byte string prefix + path bytes; payload adds the kind
/// tag. The cap applies to the payload (length field).
fn path_request_with_payload(payload: usize) -> ServiceRequest {
    let path_len = payload - 1 - 4;
    ServiceRequest::PathRemap {
        path: "a".repeat(path_len),
    }
}

#[test]
fn frame_cap_boundary() {
    let under = encode_frame(&path_request_with_payload(FRAME_CAP - 1)).unwrap();
    assert_eq!(under.len(), 4 + FRAME_CAP - 1);
    let at = encode_frame(&path_request_with_payload(FRAME_CAP)).unwrap();
    assert_eq!(at.len(), 4 + FRAME_CAP);
    assert_eq!(
        encode_frame(&path_request_with_payload(FRAME_CAP + 1)),
        Err(FrameError::Oversize(FRAME_CAP + 1))
    );
}

#[test]
fn oversize_length_field_is_a_protocol_error() {
    let mut bytes = ((FRAME_CAP + 1) as u32).to_be_bytes().to_vec();
    bytes.push(kind::UNAME);
    assert!(matches!(
        decode_frame::<ServiceRequest>(&bytes),
        Err(FrameError::Oversize(_))
    ));
}

#[test]
fn unknown_kind_is_a_protocol_error() {
    let bytes = [0, 0, 0, 1, 0x7f];
    assert_eq!(
        decode_frame::<ServiceRequest>(&bytes),
        Err(FrameError::Protocol(WireError::UnknownKind(0x7f)))
    );
    assert_eq!(
        decode_frame::<ControlMessage>(&bytes),
        Err(FrameError::Protocol(WireError::UnknownKind(0x7f)))
    );
    // Request tags are not valid response tags.
    assert!(decode_frame::<ServiceResponse>(&[0, 0, 0, 2, kind::SOCKET, 0]).is_err());
}

#[test]
fn trailing_body_bytes_are_rejected() {
    let mut f = encode_frame(&ServiceRequest::Uname).unwrap();
    f[3] = 2;
    f.push(0);
    assert!(matches!(
        decode_frame::<ServiceRequest>(&f),
        Err(FrameError::Protocol(WireError::TrailingBytes(1)))
    ));
}

#[test]
fn every_request_has_its_response() {
    for (_, req) in boxer_proto::samples::service_requests() {
        let resp = req.failure(Status::ProtocolError);
        assert!(resp.answers(&req));
        assert_eq!(resp.kind(), req.kind() | kind::RESPONSE);
        assert!(!resp.fd_attached());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3334))]

    #[test]
    fn service_requests_round_trip(m in request()) {
        check_round_trip_and_prefixes(&m)?;
    }

    #[test]
    fn service_responses_round_trip(m in response()) {
        check_round_trip_and_prefixes(&m)?;
    }

    #[test]
    fn control_messages_round_trip(m in control()) {
        check_round_trip_and_prefixes(&m)?;
    }
}
