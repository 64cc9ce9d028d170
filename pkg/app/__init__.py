# Prosumer locational-disparity simulator
