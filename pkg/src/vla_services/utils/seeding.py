def derive_seed(*parts) -> int:
    """Stable 31-bit seed from arbitrary labels."""
    text = "|".join(str(p) for p in parts)
    value = 0
    for byte in text.encode("utf-8"):
        value = (value * 131 + byte) % (2**31 - 1)
    return value
