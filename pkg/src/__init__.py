# Badminton match analytics toolkit
