"""EP turbo MIMO detection pipeline: alphabets, channel, LDPC, detectors, turbo loop and BER harness."""
